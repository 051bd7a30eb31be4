# app/nn/tensor.py
"""
Dense tensors with reverse-mode automatic differentiation.

Every differentiable op builds an output Tensor that remembers its parents and a
`_backward` closure pushing `out.grad` into the parents (the micrograd layout,
generalised from scalars to numpy arrays). `backward(loss)` orders the graph
into a Tape and replays it in reverse, visiting each recorded op once.

Reductions: numpy sums are deterministic for identical inputs and shapes. Inside
`exact_reductions()` every contraction additionally accumulates sequentially
over the contracted axis, so one output row never depends on how many other
rows were computed alongside it.
"""
import math
import threading
from contextlib import contextmanager
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from app.core.config import LAYER_NORM_EPS
from app.core.errors import InactiveTarget, NonFiniteValue, NotScalar, ShapeMismatch

DTYPES = {"f32": np.float32, "f64": np.float64}

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad", True)


def exact_enabled() -> bool:
    return getattr(_state, "exact", False)


@contextmanager
def no_grad() -> Iterator[None]:
    previous = grad_enabled()
    _state.grad = False
    try:
        yield
    finally:
        _state.grad = previous


@contextmanager
def exact_reductions() -> Iterator[None]:
    previous = exact_enabled()
    _state.exact = True
    try:
        yield
    finally:
        _state.exact = previous


ArrayLike = Union["Tensor", np.ndarray, float, int]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: Tuple["Tensor", ...] = ()
        self._backward = None

    # ---------------- basics ----------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(f"{what} contains NaN or Inf")
        return self

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}, requires_grad={self.requires_grad})"

    # ---------------- operators ----------------
    def __add__(self, other: ArrayLike) -> "Tensor":
        return add(self, other)

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return add(other, self)

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return add(self, neg(_lift(other, self)))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return add(other, neg(self))

    def __neg__(self) -> "Tensor":
        return neg(self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return mul(other, self)

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        return div(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __getitem__(self, index) -> "Tensor":
        return take(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def parameter(data, dtype=np.float32) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=True)


# ----------------------------
# Graph plumbing
# ----------------------------
def _lift(value: ArrayLike, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if not t.requires_grad:
        return
    grad = _unbroadcast(np.asarray(grad), t.data.shape)
    if t.grad is None:
        t.grad = np.array(grad, dtype=t.data.dtype, copy=True).reshape(t.data.shape)
    else:
        t.grad = t.grad + grad.astype(t.data.dtype, copy=False)


class Tape:
    """Recorded ops reachable from a loss, in topological order (inputs first)."""

    def __init__(self, nodes: List[Tensor]):
        self.nodes = nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def replay_backward(self) -> None:
        for node in reversed(self.nodes):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def build_tape(root: Tensor) -> Tape:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return Tape(order)


def backward(loss: Tensor) -> Tape:
    """Populate .grad on every requires_grad ancestor of `loss`; leaf grads accumulate across calls."""
    if loss.data.size != 1:
        raise NotScalar(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return Tape([])
    tape = build_tape(loss)
    loss.grad = np.ones_like(loss.data)
    tape.replay_backward()
    return tape


# ----------------------------
# Elementwise
# ----------------------------
def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _result(a.data + b.data, (a, b), _backward, "add")


def neg(a: Tensor) -> Tensor:
    def _backward(g):
        _accumulate(a, -g)

    return _result(-a.data, (a,), _backward, "neg")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _result(a.data * b.data, (a, b), _backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _result(a.data / b.data, (a, b), _backward, "div")


def _pair(a: ArrayLike, b: ArrayLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    b = _lift(b)
    return _lift(a, b), b


def gelu(x: Tensor) -> Tensor:
    """Exact GELU, x * Phi(x)."""
    cdf = 0.5 * (1.0 + erf(x.data / math.sqrt(2.0)))

    def _backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) / math.sqrt(2.0 * math.pi)
        _accumulate(x, g * (cdf + x.data * pdf))

    return _result(x.data * cdf, (x,), _backward, "gelu")


# ----------------------------
# Shape ops
# ----------------------------
def reshape(a: Tensor, shape: Tuple[int, ...]) -> Tensor:
    def _backward(g):
        _accumulate(a, g.reshape(a.data.shape))

    return _result(a.data.reshape(shape), (a,), _backward, "reshape")


def transpose(a: Tensor, axes: Tuple[int, ...]) -> Tensor:
    inverse = tuple(np.argsort(axes))

    def _backward(g):
        _accumulate(a, g.transpose(inverse))

    return _result(a.data.transpose(axes), (a,), _backward, "transpose")


def swapaxes(a: Tensor, axis1: int, axis2: int) -> Tensor:
    axes = list(range(a.ndim))
    axes[axis1], axes[axis2] = axes[axis2], axes[axis1]
    return transpose(a, tuple(axes))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return all(isinstance(p, (slice, int, type(None))) or p is Ellipsis for p in parts)


def take(a: Tensor, index) -> Tensor:
    """a[index] with gradient scatter-add (repeated fancy indices accumulate)."""
    basic = _is_basic_index(index)

    def _backward(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] += g
        else:
            np.add.at(full, index, g)
        _accumulate(a, full)

    return _result(a.data[index], (a,), _backward, "take")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def _backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accumulate(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, _backward, "concat")


# ----------------------------
# Reductions
# ----------------------------
def _expand_like(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def _backward(g):
        _accumulate(a, _expand_like(g, a.data.shape, axis, keepdims))

    return _result(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), _backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.data.shape[i] for i in np.atleast_1d(axis)]))
    return reduce_sum(a, axis, keepdims) * (1.0 / count)


# ----------------------------
# Linear algebra
# ----------------------------
def contract(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Batched x @ y; sequential over the inner axis under exact_reductions()."""
    if exact_enabled():
        return np.add.reduce(x[..., :, :, None] * y[..., None, :, :], axis=-2)
    return np.matmul(x, y)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dimensions differ: {a.shape} x {b.shape}")

    def _backward(g):
        if a.requires_grad:
            _accumulate(a, contract(g, np.swapaxes(b.data, -1, -2)))
        if b.requires_grad:
            _accumulate(b, contract(np.swapaxes(a.data, -1, -2), g))

    return _result(contract(a.data, b.data), (a, b), _backward, "matmul")


def rowdot(a: Tensor, b: Tensor) -> Tensor:
    """Per-row inner product over the last axis, keeping it as size 1: (..., k) x (..., k) -> (..., 1)."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"rowdot shapes differ: {a.shape} vs {b.shape}")
    left = reshape(a, a.shape[:-1] + (1, a.shape[-1]))
    right = reshape(b, b.shape[:-1] + (b.shape[-1], 1))
    return reshape(matmul(left, right), a.shape[:-1] + (1,))


# ----------------------------
# Normalisation / probabilities
# ----------------------------
def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """
    Max-subtracted softmax. `mask` (broadcastable booleans, True = allowed) sends
    disallowed entries to exactly 0; every row needs at least one allowed entry.
    """
    z = x.data if mask is None else np.where(mask, x.data, -np.inf)
    shifted = np.exp(z - z.max(axis=axis, keepdims=True))
    y = shifted / shifted.sum(axis=axis, keepdims=True)

    def _backward(g):
        _accumulate(x, y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _result(y, (x,), _backward, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LAYER_NORM_EPS) -> Tensor:
    d = x.shape[-1]
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def _backward(g):
        if gain.requires_grad:
            _accumulate(gain, g * xhat)
        if bias.requires_grad:
            _accumulate(bias, g)
        if x.requires_grad:
            gx = g * gain.data
            _accumulate(x, (inv_std / d) * (
                d * gx
                - gx.sum(axis=-1, keepdims=True)
                - xhat * (gx * xhat).sum(axis=-1, keepdims=True)
            ))

    return _result(xhat * gain.data + bias.data, (x, gain, bias), _backward, "layer_norm")


def masked_cross_entropy(scores: Tensor, target_index, active_mask) -> Tensor:
    """
    -log softmax(scores)[target] with the softmax taken over active indices only.

    scores: (..., M); target_index: int or int array shaped scores.shape[:-1];
    active_mask: bool (M,). Returns a tensor shaped scores.shape[:-1].
    Gradient at inactive indices is exactly 0.
    """
    mask = np.asarray(active_mask, dtype=bool)
    targets = np.asarray(target_index, dtype=np.int64)
    if mask.shape != scores.shape[-1:]:
        raise ShapeMismatch(f"active mask shape {mask.shape} does not match scores {scores.shape}")
    if targets.shape != scores.shape[:-1]:
        raise ShapeMismatch(f"targets shape {targets.shape} does not match scores {scores.shape}")
    if not mask.any() or not np.all(mask[targets]):
        raise InactiveTarget("target index is masked out of the active set")

    z = np.where(mask, scores.data, -np.inf)
    top = z.max(axis=-1, keepdims=True)
    shifted = np.exp(z - top)
    total = shifted.sum(axis=-1, keepdims=True)
    picked = np.take_along_axis(scores.data, targets[..., None], axis=-1)
    loss = (top + np.log(total) - picked)[..., 0]

    def _backward(g):
        probs = shifted / total
        np.put_along_axis(probs, targets[..., None], np.take_along_axis(probs, targets[..., None], axis=-1) - 1.0, axis=-1)
        _accumulate(scores, probs * np.asarray(g)[..., None])

    return _result(loss, (scores,), _backward, "masked_cross_entropy")
