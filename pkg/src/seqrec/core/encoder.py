"""
Self-attentive next-item encoder with learnable Bernoulli dropout on every FFN output.

Each block applies, in pre-norm residual form,

    a <- a + Attention(LayerNorm(a))            (strictly causal)
    a <- a + mask * FFN(LayerNorm(a))           (FFN = W2 relu(W1 x + b1) + b2)

and a final layer norm follows the last block. Sequences are left-padded with
item 0; the most recent item always sits at position T - 1.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from ..models.config import ModelConfig
from . import autodiff as ad
from .autodiff import Tensor
from .errors import CheckpointFormatError, DimensionError
from .gates import BernoulliGate, apply_gate, expected_gate

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "seqrec-checkpoint/v1"


@dataclass
class BlockParams:
    """Parameters of one attention + gated FFN block."""

    w_q: Tensor
    w_k: Tensor
    w_v: Tensor
    w_o: Tensor
    attn_norm_gain: Tensor
    attn_norm_bias: Tensor
    ffn_norm_gain: Tensor
    ffn_norm_bias: Tensor
    w_1: Tensor
    b_1: Tensor
    w_2: Tensor
    b_2: Tensor

    FIELDS = ("w_q", "w_k", "w_v", "w_o", "attn_norm_gain", "attn_norm_bias",
              "ffn_norm_gain", "ffn_norm_bias", "w_1", "b_1", "w_2", "b_2")


@dataclass
class SasrecParams:
    """All continuous parameters plus the per-block gates."""

    item_embedding: Tensor
    position_embedding: Tensor
    blocks: List[BlockParams]
    final_norm_gain: Tensor
    final_norm_bias: Tensor
    gates: List[BernoulliGate] = field(default_factory=list)

    @property
    def num_items(self) -> int:
        """Real items; the table also holds padding (row 0) and the mask token (last row)."""
        return self.item_embedding.shape[0] - 2

    @property
    def mask_token(self) -> int:
        return self.item_embedding.shape[0] - 1

    def named_tensors(self) -> Iterator[Tuple[str, Tensor]]:
        yield "item_embedding", self.item_embedding
        yield "position_embedding", self.position_embedding
        for c, block in enumerate(self.blocks):
            for name in BlockParams.FIELDS:
                yield f"blocks.{c}.{name}", getattr(block, name)
        yield "final_norm_gain", self.final_norm_gain
        yield "final_norm_bias", self.final_norm_bias

    def zero_grad(self) -> None:
        for _, tensor in self.named_tensors():
            tensor.zero_grad()

    def copy(self) -> "SasrecParams":
        def clone(t: Tensor) -> Tensor:
            return Tensor(t.data, requires_grad=t.requires_grad, name=t.name)

        return SasrecParams(
            item_embedding=clone(self.item_embedding),
            position_embedding=clone(self.position_embedding),
            blocks=[BlockParams(**{n: clone(getattr(b, n)) for n in BlockParams.FIELDS}) for b in self.blocks],
            final_norm_gain=clone(self.final_norm_gain),
            final_norm_bias=clone(self.final_norm_bias),
            gates=[BernoulliGate(g.layer_index, g.logits.copy()) for g in self.gates],
        )


@dataclass
class SequenceEmbedding:
    """Per-position representations h (B x T x d) and which positions hold items."""

    h: Tensor
    valid_mask: np.ndarray


def init_params(config: ModelConfig, num_items: int, rng: np.random.Generator) -> SasrecParams:
    """Random initial parameters; the padding row starts (and stays) at zero."""
    d = config.embed_dim
    scale = 1.0 / np.sqrt(d)

    def param(shape, name: str, value: Optional[float] = None) -> Tensor:
        data = np.full(shape, value) if value is not None else rng.normal(0.0, scale, size=shape)
        return Tensor(data, requires_grad=True, name=name)

    item_embedding = param((num_items + 2, d), "item_embedding")
    item_embedding.data[0] = 0.0
    blocks = []
    for c in range(config.num_blocks):
        blocks.append(BlockParams(
            w_q=param((d, d), f"blocks.{c}.w_q"),
            w_k=param((d, d), f"blocks.{c}.w_k"),
            w_v=param((d, d), f"blocks.{c}.w_v"),
            w_o=param((d, d), f"blocks.{c}.w_o"),
            attn_norm_gain=param((d,), f"blocks.{c}.attn_norm_gain", 1.0),
            attn_norm_bias=param((d,), f"blocks.{c}.attn_norm_bias", 0.0),
            ffn_norm_gain=param((d,), f"blocks.{c}.ffn_norm_gain", 1.0),
            ffn_norm_bias=param((d,), f"blocks.{c}.ffn_norm_bias", 0.0),
            w_1=param((d, d), f"blocks.{c}.w_1"),
            b_1=param((d,), f"blocks.{c}.b_1", 0.0),
            w_2=param((d, d), f"blocks.{c}.w_2"),
            b_2=param((d,), f"blocks.{c}.b_2", 0.0),
        ))
    return SasrecParams(
        item_embedding=item_embedding,
        position_embedding=param((config.max_len, d), "position_embedding"),
        blocks=blocks,
        final_norm_gain=param((d,), "final_norm_gain", 1.0),
        final_norm_bias=param((d,), "final_norm_bias", 0.0),
        gates=[BernoulliGate.initial(c, d, config.lbd_init_keep) for c in range(config.num_blocks)],
    )


def attention_mask(valid: np.ndarray) -> np.ndarray:
    """allowed[b, t, s]: position t may attend to s <= t that holds an item (or to itself)."""
    T = valid.shape[1]
    causal = np.tril(np.ones((T, T), dtype=bool))
    allowed = causal[None, :, :] & valid[:, None, :]
    allowed |= np.eye(T, dtype=bool)[None, :, :]
    return allowed


def _dropout(x: Tensor, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = (rng.uniform(size=x.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, Tensor(keep))


def attention_weights(x: Tensor, block: BlockParams, allowed: np.ndarray, num_heads: int) -> Tuple[Tensor, Tensor]:
    """Softmax attention weights (B x heads x T x T) and the head-split values."""
    B, T, d = x.shape
    head_dim = d // num_heads

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (B, T, num_heads, head_dim)), (0, 2, 1, 3))

    q = split(ad.matmul(x, block.w_q))
    k = split(ad.matmul(x, block.w_k))
    v = split(ad.matmul(x, block.w_v))
    scores = ad.scale(ad.matmul(q, ad.transpose(k)), 1.0 / np.sqrt(head_dim))
    scores = ad.masked_fill(scores, ~allowed[:, None, :, :])
    return ad.softmax_lastdim(scores), v


def attention_block(a: Tensor, block: BlockParams, allowed: np.ndarray, config: ModelConfig,
                    rng: Optional[np.random.Generator] = None) -> Tensor:
    """Pre-norm causal multi-head self-attention with a residual connection."""
    if a.shape[-1] != config.embed_dim:
        raise DimensionError(f"attention_block expects trailing dim {config.embed_dim}, got {a.shape}")
    B, T, d = a.shape
    x = ad.layer_norm(a, block.attn_norm_gain, block.attn_norm_bias, config.layer_norm_eps)
    weights, v = attention_weights(x, block, allowed, config.num_heads)
    weights = _dropout(weights, config.attention_dropout, rng)
    context = ad.reshape(ad.transpose(ad.matmul(weights, v), (0, 2, 1, 3)), (B, T, d))
    return ad.add(a, ad.matmul(context, block.w_o))


def ffn_block(a: Tensor, block: BlockParams, mask: np.ndarray, eps: float = 1e-8) -> Tensor:
    """a + mask * FFN(LayerNorm(a)): the gated pre-norm feed-forward sub-layer."""
    x = ad.layer_norm(a, block.ffn_norm_gain, block.ffn_norm_bias, eps)
    x = ad.relu(ad.add_lastdim(ad.matmul(x, block.w_1), block.b_1))
    x = ad.add_lastdim(ad.matmul(x, block.w_2), block.b_2)
    return ad.add(a, apply_gate(x, mask))


def fit_length(inputs: np.ndarray, max_len: int) -> np.ndarray:
    """Keep the most recent ``max_len`` columns, left-padding with 0 when shorter."""
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.ndim != 2:
        raise DimensionError(f"encoder inputs must be a (batch, length) matrix, got {inputs.shape}")
    if inputs.shape[1] >= max_len:
        return inputs[:, inputs.shape[1] - max_len:]
    pad = np.zeros((inputs.shape[0], max_len - inputs.shape[1]), dtype=np.int64)
    return np.concatenate([pad, inputs], axis=1)


def encode(inputs: np.ndarray, params: SasrecParams, config: ModelConfig,
           masks: Optional[Sequence[np.ndarray]] = None,
           rng: Optional[np.random.Generator] = None) -> SequenceEmbedding:
    """
    Encode left-padded item sequences.

    Args:
        inputs: (B, T') item indices; truncated/padded to config.max_len
        params: Encoder parameters and gates
        config: Encoder hyperparameters
        masks: One binary mask per gated layer (train mode); None selects eval
            mode, where every gate contributes its keep probability, or one
            when the config disables gates
        rng: Source for the fixed dropouts in train mode

    Returns:
        SequenceEmbedding with h of shape (B, T, d)
    """
    inputs = fit_length(inputs, config.max_len)
    B, T = inputs.shape
    train = masks is not None
    if train and len(masks) != len(params.blocks):
        raise DimensionError(f"{len(masks)} gate masks for {len(params.blocks)} blocks")
    if train:
        gate_masks = list(masks)
    elif config.gates_disabled:
        gate_masks = [np.ones(g.width) for g in params.gates]
    else:
        gate_masks = [expected_gate(g) for g in params.gates]
    drop_rng = rng if train else None

    valid = inputs != 0
    positions = np.broadcast_to(np.arange(T), (B, T))
    h = ad.add(ad.embedding_lookup(params.item_embedding, inputs),
               ad.embedding_lookup(params.position_embedding, positions))
    h = ad.mul(h, Tensor(np.broadcast_to(valid[:, :, None], h.shape).astype(np.float64)))
    h = _dropout(h, config.embedding_dropout, drop_rng)

    allowed = attention_mask(valid)
    for block, mask in zip(params.blocks, gate_masks):
        h = attention_block(h, block, allowed, config, drop_rng)
        h = ffn_block(h, block, mask, config.layer_norm_eps)
    h = ad.layer_norm(h, params.final_norm_gain, params.final_norm_bias, config.layer_norm_eps)
    return SequenceEmbedding(h=h, valid_mask=valid)


def score_items(h_t: Tensor, item_embedding: Tensor) -> Tensor:
    """Dot-product score of every table row against one (d,) or many (B, d) representations."""
    h_t = ad.as_tensor(h_t)
    single = h_t.ndim == 1
    if single:
        h_t = ad.reshape(h_t, (1, h_t.shape[0]))
    scores = ad.matmul(h_t, ad.transpose(item_embedding))
    return ad.reshape(scores, (scores.shape[1],)) if single else scores


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Encoder configuration and parameters at one point of training."""

    config: ModelConfig
    params: SasrecParams
    epoch: int = 0
    metadata: Dict = field(default_factory=dict)

    def to_dict(self) -> Dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config": self.config.model_dump(),
            "epoch": self.epoch,
            "metadata": self.metadata,
            "num_items": self.params.num_items,
            "tensors": {name: t.data.tolist() for name, t in self.params.named_tensors()},
            "gates": [g.logits.tolist() for g in self.params.gates],
        }

    def save(self, path: Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True))
        logger.info(f"💾 Checkpoint written to {path}")

    @classmethod
    def from_dict(cls, payload: Dict) -> "Checkpoint":
        found = payload.get("format") if isinstance(payload, dict) else None
        if found != CHECKPOINT_FORMAT:
            raise CheckpointFormatError(f"checkpoint format mismatch: expected {CHECKPOINT_FORMAT!r}, found {found!r}")
        try:
            config = ModelConfig(**payload["config"])
            params = init_params(config, int(payload["num_items"]), np.random.default_rng(0))
            tensors = payload["tensors"]
            for name, tensor in params.named_tensors():
                data = np.asarray(tensors[name], dtype=np.float64)
                if data.shape != tensor.shape:
                    raise CheckpointFormatError(f"tensor {name} has shape {data.shape}, expected {tensor.shape}")
                tensor.data = data
            gates = payload["gates"]
            if len(gates) != len(params.gates):
                raise CheckpointFormatError(f"{len(gates)} gates stored for {len(params.gates)} blocks")
            for gate, logits in zip(params.gates, gates):
                gate.logits = np.asarray(logits, dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, CheckpointFormatError):
                raise
            raise CheckpointFormatError(f"corrupted checkpoint: {e}")
        return cls(config=config, params=params, epoch=int(payload.get("epoch", 0)),
                   metadata=payload.get("metadata", {}))

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        try:
            payload = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise CheckpointFormatError(f"corrupted checkpoint {path}: {e}")
        return cls.from_dict(payload)
