"""
Reverse-mode automatic differentiation over dense float64 arrays.

Every operation records its output on the thread's current Tape when at least
one operand requires a gradient. The tape is append-only, so its order is a
topological order of the graph; ``backward`` walks it in reverse once and then
resets it. Graphs are rebuilt on every forward pass.

Broadcasting is limited to scalar-with-anything and equal shapes, except for
``matmul`` (batch dimensions) and the explicit ``*_lastdim`` operations.
"""

import logging
import threading
from contextlib import contextmanager
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ContractError, DimensionError, DomainError, ItemIndexError

logger = logging.getLogger(__name__)

ArrayLike = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

# Fill value used for masked attention/similarity logits. Finite so that every
# stored value stays finite; exp() of it underflows to exactly zero.
MASK_FILL = -1e9


class Tensor:
    """Dense row-major float64 array with an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._parents: Tuple["Tensor", ...] = ()
        self._backward: Optional[BackwardFn] = None

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = np.asarray(data, dtype=np.float64)
        out.requires_grad = False
        out.grad = None
        out.name = None
        out._parents = ()
        out._backward = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return sub(self, other)

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return sub(other, self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Ordered record of differentiable operations for one thread."""

    def __init__(self):
        self.nodes: List[Tensor] = []
        self._ids: set = set()
        self.enabled = True

    def record(self, node: Tensor) -> None:
        self.nodes.append(node)
        self._ids.add(id(node))

    def contains(self, node: Tensor) -> bool:
        return id(node) in self._ids

    def reset(self) -> None:
        self.nodes = []
        self._ids = set()

    def __len__(self) -> int:
        return len(self.nodes)


_local = threading.local()


def current_tape() -> Tape:
    """Return this thread's tape, creating it on first use."""
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = Tape()
        _local.tape = tape
    return tape


@contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording operations."""
    tape = current_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = previous


def as_tensor(value: ArrayLike) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _node(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    out = Tensor._wrap(data)
    tape = current_tape()
    if tape.enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        tape.record(out)
    return out


def _is_scalar(t: Tensor) -> bool:
    return t.data.size == 1


def _pair(a: ArrayLike, b: ArrayLike, op: str) -> Tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and not (_is_scalar(a) or _is_scalar(b)):
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar")
    return a, b


def _reduce_to(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    if int(np.prod(shape)) == 1:
        return np.full(shape, grad.sum())
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, dim in enumerate(shape) if dim == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "add")
    return _node(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "sub")
    return _node(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b, "mul")
    return _node(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def scale(a: ArrayLike, factor: float) -> Tensor:
    a = as_tensor(a)
    factor = float(factor)
    return _node(a.data * factor, (a,), lambda g: (g * factor,))


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    positive = a.data > 0
    return _node(np.where(positive, a.data, 0.0), (a,), lambda g: (g * positive,))


def sigmoid_array(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    s = sigmoid_array(a.data)
    return _node(s, (a,), lambda g: (g * s * (1.0 - s),))


def log_sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = -np.logaddexp(0.0, -a.data)
    return _node(out, (a,), lambda g: (g * sigmoid_array(-a.data),))


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,))


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        bad = float(a.data[a.data <= 0].flat[0])
        raise DomainError(f"log of non-positive value {bad}")
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,))


def masked_fill(a: ArrayLike, mask: np.ndarray, value: float = MASK_FILL) -> Tensor:
    """Replace entries where ``mask`` is true by a constant; they get no gradient."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    keep = ~mask
    return _node(np.where(mask, value, a.data), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# last-dimension broadcasting
# ---------------------------------------------------------------------------

def _check_lastdim(a: Tensor, v: Tensor, op: str) -> int:
    if v.ndim != 1 or a.ndim == 0 or a.shape[-1] != v.shape[0]:
        raise DimensionError(f"{op}: vector {v.shape} does not match trailing dimension of {a.shape}")
    return v.shape[0]


def add_lastdim(a: ArrayLike, v: ArrayLike) -> Tensor:
    a, v = as_tensor(a), as_tensor(v)
    d = _check_lastdim(a, v, "add_lastdim")
    return _node(a.data + v.data, (a, v), lambda g: (g, g.reshape(-1, d).sum(axis=0)))


def mul_lastdim(a: ArrayLike, v: ArrayLike) -> Tensor:
    a, v = as_tensor(a), as_tensor(v)
    d = _check_lastdim(a, v, "mul_lastdim")
    return _node(a.data * v.data, (a, v),
                 lambda g: (g * v.data, (g * a.data).reshape(-1, d).sum(axis=0)))


# ---------------------------------------------------------------------------
# linear algebra and normalizers
# ---------------------------------------------------------------------------

def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions of {a.shape} and {b.shape} do not broadcast")

    def backward(g: np.ndarray):
        ga = _reduce_to(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _reduce_to(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(a.data @ b.data, (a, b), backward)


def softmax_lastdim(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    if a.ndim == 0 or a.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim: empty last dimension in {a.shape}")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return _node(out, (a,), lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def log_softmax_lastdim(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)
    return _node(out, (a,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def layer_norm(a: ArrayLike, gain: ArrayLike, bias: ArrayLike, eps: float = 1e-8) -> Tensor:
    """Normalize over the last dimension, then apply an elementwise affine map."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    if eps <= 0:
        raise ContractError(f"layer_norm eps must be positive, got {eps}")
    d = _check_lastdim(a, gain, "layer_norm")
    _check_lastdim(a, bias, "layer_norm")
    mean = a.data.mean(axis=-1, keepdims=True)
    centered = a.data - mean
    inv_std = 1.0 / np.sqrt((centered ** 2).mean(axis=-1, keepdims=True) + eps)
    xhat = centered * inv_std

    def backward(g: np.ndarray):
        gx = g * gain.data
        ga = inv_std * (gx - gx.mean(axis=-1, keepdims=True)
                        - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        return (ga,
                (g * xhat).reshape(-1, d).sum(axis=0),
                g.reshape(-1, d).sum(axis=0))

    return _node(xhat * gain.data + bias.data, (a, gain, bias), backward)


def l2_normalize_lastdim(a: ArrayLike, eps: float = 1e-12) -> Tensor:
    """a / sqrt(|a|^2 + eps) along the last dimension."""
    a = as_tensor(a)
    if eps <= 0:
        raise ContractError(f"l2_normalize_lastdim eps must be positive, got {eps}")
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True) + eps)
    unit = a.data / norm
    return _node(unit, (a,), lambda g: ((g - unit * (g * unit).sum(axis=-1, keepdims=True)) / norm,))


# ---------------------------------------------------------------------------
# indexing and shape
# ---------------------------------------------------------------------------

def embedding_lookup(table: ArrayLike, indices) -> Tensor:
    """Gather rows of a 2-D table; backward scatter-adds into those rows."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise DimensionError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    idx = np.asarray(indices)
    if idx.size and not np.issubdtype(idx.dtype, np.integer):
        raise ItemIndexError(f"embedding_lookup: indices must be integers, got {idx.dtype}")
    idx = idx.astype(np.int64)
    rows = table.shape[0]
    bad = (idx < 0) | (idx >= rows)
    if np.any(bad):
        raise ItemIndexError(f"index {int(idx[bad].flat[0])} out of range for table with {rows} rows")

    def backward(g: np.ndarray):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx, g)
        return (gt,)

    return _node(table.data[idx], (table,), backward)


def take_lastdim(a: ArrayLike, indices) -> Tensor:
    """Pick one entry of the last dimension per leading position."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise DimensionError(f"take_lastdim: indices {idx.shape} do not match {a.shape[:-1]}")
    expanded = idx[..., None]

    def backward(g: np.ndarray):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, expanded, g[..., None], axis=-1)
        return (ga,)

    return _node(np.take_along_axis(a.data, expanded, axis=-1)[..., 0], (a,), backward)


def reshape(a: ArrayLike, shape: Tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: ArrayLike, axes: Optional[Tuple[int, ...]] = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[:-2] + (a.ndim - 1, a.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return _node(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),))


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    sizes = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g: np.ndarray):
        return tuple(np.split(g, sizes, axis=axis))

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def sum(a: ArrayLike, axis: Optional[int] = None) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis)

    def backward(g: np.ndarray):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), backward)


def mean(a: ArrayLike, axis: Optional[int] = None) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis), 1.0 / count)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss, then reset the tape."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = current_tape()
    if loss.is_leaf:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    if not tape.contains(loss):
        raise ContractError("loss was not produced on the current tape")

    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            if parent.is_leaf:
                parent.grad = pg.copy() if parent.grad is None else parent.grad + pg
            elif id(parent) in pending:
                pending[id(parent)] = pending[id(parent)] + pg
            else:
                pending[id(parent)] = pg
    logger.debug(f"backward visited {len(tape)} nodes")
    tape.reset()


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-4,
               analytic: Optional[Sequence[np.ndarray]] = None, floor: float = 1e-6) -> float:
    """
    Compare analytic gradients of ``f`` with central finite differences.

    Args:
        f: Deterministic closure evaluating a scalar loss from ``params``
        params: Leaf tensors to perturb
        step: Finite-difference step
        analytic: Gradients to check instead of those produced by ``backward``
        floor: Lower bound of the relative-error denominator

    Returns:
        Maximum over all coordinates of |analytic - numeric| / max(|analytic| + |numeric|, floor)
    """
    if analytic is None:
        for p in params:
            p.zero_grad()
        backward(f())
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    with no_grad():
        for p, a_grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            a_flat = np.asarray(a_grad).reshape(-1)
            for i in range(flat.size):
                original = flat[i]
                flat[i] = original + step
                plus = f().item()
                flat[i] = original - step
                minus = f().item()
                flat[i] = original
                numeric = (plus - minus) / (2.0 * step)
                denom = max(abs(a_flat[i]) + abs(numeric), floor)
                worst = max(worst, abs(a_flat[i] - numeric) / denom)
    return worst
