"""
Learnable Bernoulli dropout gates and the ARM gradient estimator for their logits.

A gate holds one logit per neuron; sigmoid(logit) is the keep probability.
During training a binary mask is drawn from the gate, and the logit gradient
is estimated from two loss evaluations that share a single uniform draw:

    g = (f(1[u > sigmoid(-phi)]) - f(1[u < sigmoid(phi)])) * (u - 1/2)

which is unbiased for the gradient of E[f(z)] with respect to phi.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

from .autodiff import Tensor, mul_lastdim, no_grad, sigmoid_array
from .errors import ContractError, DimensionError

logger = logging.getLogger(__name__)

# forward(masks) -> scalar loss; masks[p][c] is the mask of gated layer c in pass p
ForwardFn = Callable[[List[List[np.ndarray]]], Tensor]


def logit(p: float) -> float:
    return float(np.log(p) - np.log1p(-p))


@dataclass
class BernoulliGate:
    """Per-neuron keep-probability logits of one gated FFN layer."""

    layer_index: int
    logits: np.ndarray

    @classmethod
    def initial(cls, layer_index: int, width: int, keep: float = 0.9) -> "BernoulliGate":
        if not 0.0 < keep < 1.0:
            raise ContractError(f"initial keep probability must lie in (0, 1), got {keep}")
        return cls(layer_index=layer_index, logits=np.full(width, logit(keep)))

    @property
    def width(self) -> int:
        return int(self.logits.shape[0])

    def keep_probability(self) -> np.ndarray:
        return sigmoid_array(self.logits)


@dataclass(frozen=True)
class ArmSample:
    """Shared uniforms for one gated layer and the two masks built from them."""

    layer_index: int
    uniforms: np.ndarray
    mask_true: np.ndarray
    mask_anti: np.ndarray


@dataclass
class ArmStepResult:
    loss_true: Tensor
    loss_anti: float
    gradients: List[np.ndarray]
    masks_true: List[List[np.ndarray]]
    samples: List[ArmSample] = field(default_factory=list)


def sample_gate(gate: BernoulliGate, rng: np.random.Generator,
                uniforms: Optional[np.ndarray] = None, draws: Optional[int] = None) -> ArmSample:
    """
    Draw one uniform per neuron and build the true and antithetic masks.

    Args:
        gate: Gate whose logits define the Bernoulli parameters
        rng: Seeded generator
        uniforms: Explicit uniforms instead of drawing from ``rng``
        draws: Add a leading axis of this many independent draws
    """
    if uniforms is None:
        size = gate.width if draws is None else (draws, gate.width)
        uniforms = rng.uniform(size=size)
    u = np.asarray(uniforms, dtype=np.float64)
    if u.shape[-1] != gate.width:
        raise DimensionError(f"uniforms of shape {u.shape} do not fit gate of width {gate.width}")
    mask_true = (u < sigmoid_array(gate.logits)).astype(np.float64)
    mask_anti = (u > sigmoid_array(-gate.logits)).astype(np.float64)
    return ArmSample(layer_index=gate.layer_index, uniforms=u, mask_true=mask_true, mask_anti=mask_anti)


def apply_gate(x: Tensor, mask: Union[np.ndarray, Tensor]) -> Tensor:
    """Multiply the trailing dimension of ``x`` by a per-neuron mask."""
    mask = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if mask.ndim != 1 or x.shape[-1] != mask.shape[0]:
        raise DimensionError(f"gate mask {mask.shape} does not match trailing dimension of {x.shape}")
    return mul_lastdim(x, Tensor(mask))


def expected_gate(gate: BernoulliGate) -> np.ndarray:
    """Keep probabilities used in place of sampled masks at evaluation time."""
    return gate.keep_probability()


def arm_gradient(loss_true: Union[float, np.ndarray], loss_anti: Union[float, np.ndarray],
                 samples: Sequence[ArmSample], gates: Sequence[BernoulliGate]) -> List[np.ndarray]:
    """
    ARM estimate of the logit gradient for every gate.

    A gate may be sampled in several passes (one ArmSample each); its gradient
    is the sum of the per-pass terms. Losses may be arrays over a leading draw
    axis, in which case the gradients are per draw.
    """
    if not samples:
        raise ContractError("arm_gradient needs at least one sample")
    counts = [0] * len(gates)
    for s in samples:
        if not 0 <= s.layer_index < len(gates):
            raise ContractError(f"sample for layer {s.layer_index} but only {len(gates)} gates")
        if s.uniforms.shape[-1] != gates[s.layer_index].width:
            raise ContractError(f"sample width {s.uniforms.shape[-1]} does not match "
                                f"gate {s.layer_index} width {gates[s.layer_index].width}")
        counts[s.layer_index] += 1
    if len(set(counts)) != 1:
        raise ContractError(f"each gate needs the same number of samples, got {counts}")

    diff = np.asarray(loss_anti, dtype=np.float64) - np.asarray(loss_true, dtype=np.float64)
    gradients = [np.zeros(samples[0].uniforms.shape[:-1] + (g.width,)) for g in gates]
    for s in samples:
        gradients[s.layer_index] = gradients[s.layer_index] + diff[..., None] * (s.uniforms - 0.5)
    return gradients


def arm_step(forward: ForwardFn, gates: Sequence[BernoulliGate], rng: np.random.Generator,
             passes: int = 1) -> ArmStepResult:
    """
    Sample every gate once per pass and run exactly two loss evaluations.

    The true-mask evaluation is recorded on the tape so the caller can
    backpropagate continuous gradients from ``loss_true``; the antithetic
    evaluation runs without recording.
    """
    samples = [sample_gate(gate, rng) for _ in range(passes) for gate in gates]
    width = len(gates)
    masks_true = [[s.mask_true for s in samples[p * width:(p + 1) * width]] for p in range(passes)]
    masks_anti = [[s.mask_anti for s in samples[p * width:(p + 1) * width]] for p in range(passes)]

    loss_true = forward(masks_true)
    with no_grad():
        loss_anti = forward(masks_anti).item()
    gradients = arm_gradient(loss_true.item(), loss_anti, samples, gates)
    logger.debug(f"ARM step: loss_true={loss_true.item():.6f} loss_anti={loss_anti:.6f}")
    return ArmStepResult(loss_true=loss_true, loss_anti=loss_anti, gradients=gradients,
                         masks_true=masks_true, samples=samples)
