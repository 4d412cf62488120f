"""
Training objectives: next-item prediction, the contrastive loss between two
views of a batch, and their weighted sum.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import SequenceEmbedding
from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)


@dataclass
class ViewPair:
    """Pooled representations (N x d) of the same N sequences under two views."""

    z_a: Tensor
    z_b: Tensor

    def __post_init__(self):
        if self.z_a.shape != self.z_b.shape or self.z_a.ndim != 2:
            raise DimensionError(f"views must be matching (N, d) matrices, got {self.z_a.shape} and {self.z_b.shape}")

    @property
    def size(self) -> int:
        return self.z_a.shape[0]

    def normalized(self) -> "ViewPair":
        """Both views scaled to unit rows, so dot products become cosine similarities."""
        return ViewPair(ad.l2_normalize_lastdim(self.z_a), ad.l2_normalize_lastdim(self.z_b))


def next_item_loss(h: SequenceEmbedding, positives: np.ndarray, negatives: np.ndarray,
                   item_embedding: Tensor, valid_mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Mean of -log sigmoid(s.v+ - s.v-) over positions that have a next item.

    Args:
        h: Encoder output for the batch
        positives: (B, T) next item per position, 0 where there is none
        negatives: (B, T) one sampled negative per position
        item_embedding: Shared item table used for scoring
        valid_mask: Positions to average over; defaults to ``positives != 0``
    """
    positives = np.asarray(positives, dtype=np.int64)
    negatives = np.asarray(negatives, dtype=np.int64)
    if positives.shape != h.h.shape[:2] or negatives.shape != positives.shape:
        raise DimensionError(f"targets {positives.shape}/{negatives.shape} do not match encoder output {h.h.shape}")
    mask = positives != 0 if valid_mask is None else np.asarray(valid_mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        raise ContractError("next_item_loss needs at least one valid position")

    pos_logits = ad.sum(ad.mul(h.h, ad.embedding_lookup(item_embedding, positives)), axis=-1)
    neg_logits = ad.sum(ad.mul(h.h, ad.embedding_lookup(item_embedding, negatives)), axis=-1)
    per_position = -ad.log_sigmoid(ad.sub(pos_logits, neg_logits))
    return ad.scale(ad.sum(ad.mul(per_position, Tensor(mask.astype(np.float64)))), 1.0 / count)


def last_valid_index(valid_mask: np.ndarray) -> np.ndarray:
    """Index of the last True entry in each row."""
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if not valid_mask.any(axis=1).all():
        raise ContractError("pool_sequence needs at least one valid position per sequence")
    T = valid_mask.shape[1]
    return T - 1 - np.argmax(valid_mask[:, ::-1], axis=1)


def pool_sequence(h: SequenceEmbedding) -> Tensor:
    """Representation at the last valid position of every sequence, shape (B, d)."""
    B, T, d = h.h.shape
    rows = np.arange(B) * T + last_valid_index(h.valid_mask)
    return ad.embedding_lookup(ad.reshape(h.h, (B * T, d)), rows)


def info_nce(views: ViewPair, temperature: float = 1.0) -> Tensor:
    """
    NT-Xent over the 2N pooled vectors of a view pair.

    Each anchor's positive is the other view of the same sequence; the
    remaining 2N - 2 vectors are its negatives. Similarities are dot products
    divided by ``temperature``; the loss is the mean over all 2N anchors.
    """
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    n = views.size
    if n < 2:
        raise ContractError(f"info_nce needs at least 2 sequences, got {n}")
    z = ad.concat([views.z_a, views.z_b], axis=0)
    sim = ad.scale(ad.matmul(z, ad.transpose(z)), 1.0 / temperature)
    sim = ad.masked_fill(sim, np.eye(2 * n, dtype=bool))
    targets = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    return -ad.mean(ad.take_lastdim(ad.log_softmax_lastdim(sim), targets))


def joint_loss(l_rs: Union[Tensor, float], l_ssl: Union[Tensor, float], lambda_: float) -> Tensor:
    """L_total = L_rs + lambda * L_ssl."""
    return ad.add(l_rs, ad.scale(l_ssl, lambda_))
