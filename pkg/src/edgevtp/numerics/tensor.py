"""Dense tensors with tape-based reverse-mode differentiation.

Every op computes its forward value with numpy and, when a :class:`Tape`
is active and at least one input requires a gradient, appends a
:class:`TapeNode` holding a closure that maps the output gradient to the
input gradients. :meth:`Tape.backward` walks the nodes in reverse order.

Ops are also counted per kind (``op_counts``) whether or not a tape is
recording, which is what the horizon-independence checks rely on.
"""
from __future__ import annotations

import threading
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


_local = threading.local()


def _tapes() -> list:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _counters() -> list:
    stack = getattr(_local, "counters", None)
    if stack is None:
        stack = _local.counters = []
    return stack


def current_tape() -> "Tape | None":
    stack = _tapes()
    return stack[-1] if stack else None


class Tensor:
    """A numpy array plus the bookkeeping needed for differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other, like=self), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class TapeNode:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable ops for one forward pass.

    Use as a context manager; tapes are thread-local and may nest (the
    innermost one records).
    """

    nodes: list = field(default_factory=list)
    op_counts: Counter = field(default_factory=Counter)

    def __enter__(self) -> "Tape":
        _tapes().append(self)
        _counters().append(self.op_counts)
        return self

    def __exit__(self, *exc) -> None:
        _tapes().pop()
        _counters().pop()

    def backward(self, loss: Tensor) -> dict:
        """Accumulate d(loss)/d(x) for every tensor on the tape.

        Leaves with ``requires_grad`` get their ``.grad`` set (zeros when
        the loss does not depend on them). Returns a map from tensor to
        gradient array.
        """
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.get(id(node.output))
            if g is None:
                continue
            in_grads = node.backward(g)
            for t, gi in zip(node.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        produced = {id(n.output) for n in self.nodes}
        leaves = {id(t): t for n in self.nodes for t in n.inputs
                  if t.requires_grad and id(t) not in produced}
        result = {}
        for key, t in leaves.items():
            if key in grads:
                t.grad = np.asarray(grads[key], dtype=t.dtype).reshape(t.shape)
            else:
                t.grad = np.zeros_like(t.data)
            result[t] = t.grad
        return result


def backward(tape: Tape, loss: Tensor) -> dict:
    return tape.backward(loss)


@contextmanager
def count_ops() -> Iterator[Counter]:
    """Count ops by kind without recording a tape."""
    counter: Counter = Counter()
    _counters().append(counter)
    try:
        yield counter
    finally:
        _counters().pop()


def _emit(kind: str, out: np.ndarray, inputs: tuple, backward_fn) -> Tensor:
    for c in _counters():
        c[kind] += 1
    result = Tensor(out)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        tape.nodes.append(TapeNode(kind, inputs, result, backward_fn))
    return result


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit("add", out, (a, b), back)


def sub(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _emit("sub", out, (a, b), back)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit("mul", out, (a, b), back)


def square(x: Tensor) -> Tensor:
    out = x.data * x.data

    def back(g):
        return (2.0 * x.data * g,)

    return _emit("square", out, (x,), back)


def leaky_relu(x: Tensor, slope: float = 0.01) -> Tensor:
    if not 0.0 < slope < 1.0:
        raise ContractError(f"leaky_relu slope must lie in (0, 1), got {slope}")
    pos = x.data > 0
    out = np.where(pos, x.data, slope * x.data)

    def back(g):
        return (np.where(pos, g, slope * g),)

    return _emit("leaky_relu", out, (x,), back)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``p`` is 0."""
    if rng is None or p <= 0.0:
        return x
    keep = rng.random(x.shape) >= p
    scale = np.where(keep, 1.0 / (1.0 - p), 0.0).astype(x.dtype)
    return mul(x, Tensor(scale))


# -- shape ------------------------------------------------------------------

def reshape(x: Tensor, shape: tuple) -> Tensor:
    out = x.data.reshape(shape)

    def back(g):
        return (g.reshape(x.shape),)

    return _emit("reshape", out, (x,), back)


def transpose(x: Tensor, axes: tuple) -> Tensor:
    out = np.transpose(x.data, axes)
    inverse = tuple(np.argsort(axes))

    def back(g):
        return (np.transpose(g, inverse),)

    return _emit("transpose", out, (x,), back)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = tuple(xs)
    out = np.concatenate([x.data for x in xs], axis=axis)
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit("concat", out, xs, back)


def take_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Gather rows along axis 0."""
    index = np.asarray(index, dtype=np.int64)
    out = x.data[index]

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _emit("take_rows", out, (x,), back)


# -- reductions -------------------------------------------------------------

def sum_all(x: Tensor) -> Tensor:
    out = np.asarray(x.data.sum())

    def back(g):
        return (np.broadcast_to(g, x.shape).copy(),)

    return _emit("sum", out, (x,), back)


def sum_axis(x: Tensor, axis: int) -> Tensor:
    out = x.data.sum(axis=axis)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return _emit("sum_axis", out, (x,), back)


def mean_axis(x: Tensor, axis: int) -> Tensor:
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def back(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape) / n,)

    return _emit("mean_axis", out, (x,), back)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product; leading dimensions broadcast like ``numpy.matmul``."""
    a = as_tensor(a)
    b = as_tensor(b, like=a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    out = np.matmul(a.data, b.data)

    def back(g):
        if b.ndim == 2:
            ga = g @ b.data.T
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _emit("matmul", out, (a, b), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as (in, out)."""
    y = matmul(x, weight)
    return add(y, bias) if bias is not None else y


def neighbor_sum(h: Tensor, adjacency) -> Tensor:
    """``h + A @ h`` for a sparse (N, N) adjacency with ``A[i, j] = 1`` iff j sends to i."""
    out = h.data + adjacency @ h.data
    adj_t = adjacency.T.tocsr()

    def back(g):
        return (g + adj_t @ g,)

    return _emit("neighbor_sum", out, (h,), back)


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return _emit("softmax", s, (x,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def back(g):
        gxhat = g * gamma.data
        gx = inv / n * (n * gxhat - gxhat.sum(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=-1, keepdims=True))
        ggamma = (g * xhat).reshape(-1, n).sum(axis=0)
        gbeta = g.reshape(-1, n).sum(axis=0)
        return gx, ggamma, gbeta

    return _emit("layer_norm", out, (x, gamma, beta), back)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    d = q.shape[-1]
    if d == 0:
        raise DimensionError("attention feature width d must be positive")
    if k.shape[-1] != d or v.shape[-2] != k.shape[-2]:
        raise DimensionError(
            f"attention shapes q={q.shape} k={k.shape} v={v.shape} are incompatible")
    if q.shape[-2] < 1 or k.shape[-2] < 1:
        raise DimensionError("attention needs at least one query and one key")
    scores = mul(matmul(q, transpose(k, _swap_last(k.ndim))), 1.0 / np.sqrt(d))
    return matmul(softmax(scores), v)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)
