"""Adam with bias correction and global-norm gradient clipping."""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    """First/second moment buffers mirroring the parameter shapes, plus the step counter."""

    first: List[np.ndarray] = field(default_factory=list)
    second: List[np.ndarray] = field(default_factory=list)
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "OptimizerState":
        return cls(first=[np.zeros_like(p) for p in params], second=[np.zeros_like(p) for p in params])


def adam_step(params: Sequence[np.ndarray], grads: Sequence[Optional[np.ndarray]], state: OptimizerState,
              learning_rate: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              lr_scales: Optional[Sequence[float]] = None) -> Tuple[List[np.ndarray], OptimizerState]:
    """
    One bias-corrected Adam update.

    Inputs are left untouched; the updated parameters and a new state are
    returned. A ``None`` gradient counts as zero.

    Args:
        params: Parameter arrays
        grads: Gradients aligned with ``params``
        state: Moments from the previous step
        lr_scales: Optional per-parameter learning-rate multipliers
    """
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.first:
        state = OptimizerState.for_params(params)
    if len(state.first) != len(params):
        raise DimensionError(f"optimizer state holds {len(state.first)} buffers for {len(params)} parameters")

    step = state.step + 1
    correction1 = 1.0 - beta1 ** step
    correction2 = 1.0 - beta2 ** step
    new_params, first, second = [], [], []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"gradient {g.shape} does not match parameter {p.shape}")
        m = beta1 * state.first[i] + (1.0 - beta1) * g
        v = beta2 * state.second[i] + (1.0 - beta2) * g * g
        lr = learning_rate * (lr_scales[i] if lr_scales is not None else 1.0)
        new_params.append(p - lr * (m / correction1) / (np.sqrt(v / correction2) + eps))
        first.append(m)
        second.append(v)
    return new_params, OptimizerState(first=first, second=second, step=step)


def global_norm(grads: Sequence[Optional[np.ndarray]]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None)))


def clip_global_norm(grads: Sequence[Optional[np.ndarray]],
                     max_norm: Optional[float]) -> Tuple[List[Optional[np.ndarray]], float]:
    """Rescale all gradients together so their joint L2 norm is at most ``max_norm``; returns (grads, norm before)."""
    norm = global_norm(grads)
    if not max_norm or norm <= max_norm:
        return list(grads), norm
    factor = max_norm / norm
    logger.debug(f"Clipping gradient norm {norm:.4f} to {max_norm}")
    return [None if g is None else g * factor for g in grads], norm
