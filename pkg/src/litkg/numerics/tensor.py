"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed inside an active :class:`Tape` are recorded together
with a vector-Jacobian rule; :func:`backward` replays the tape in reverse.
Outside a tape every operation is a plain numpy computation.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape():
    ...     loss = (w * w).sum()
    ...     grads = backward(loss)
    >>> grads[w]
    array([[2., 4.]])
"""
from __future__ import annotations

import threading
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

LEAKY_SLOPE = 0.01

_local = threading.local()


class ShapeError(ValueError):
    pass


class ContractError(ValueError):
    pass


class Tensor:
    """An n-dimensional float64 value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        arr = np.array(data, dtype=np.float64)
        if any(s <= 0 for s in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.name = name
        self._recorded = False

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = False
        t.grad = None
        t.name = None
        t._recorded = False
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, rows):
        return gather_rows(self, rows)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self):
        return tmean(self)

    @property
    def T(self):
        return transpose(self)


class _Node:
    __slots__ = ("out", "inputs", "vjp")

    def __init__(self, out: Tensor, inputs: Sequence[Tensor], vjp: Callable):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp


class Tape:
    """Ordered record of differentiable operations.

    Nodes are appended in execution order, which is already a topological
    order of the computation graph. Use as a context manager; tapes nest per
    thread, and the innermost one receives new records.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.nodes)

    def clear(self) -> None:
        for node in self.nodes:
            node.out._recorded = False
        self.nodes.clear()

    def backward(self, loss: Tensor) -> dict:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not self.nodes:
            raise ContractError("backward called on an empty tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        leaves: dict[int, Tensor] = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.out), None)
            if g is None:
                continue
            in_grads = node.vjp(g)
            for inp, gi in zip(node.inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if not inp._recorded:
                    leaves[key] = inp
        result = {}
        for key, leaf in leaves.items():
            g = grads[key]
            leaf.grad = g if leaf.grad is None else leaf.grad + g
            result[leaf] = g
        self.clear()
        return result


def active_tape() -> Optional[Tape]:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(loss: Tensor) -> dict:
    """Back-propagate from a scalar ``loss`` on the active tape.

    Every leaf tensor with ``requires_grad`` reached from ``loss`` gets its
    ``.grad`` accumulated; the returned dict maps those leaves to the
    gradient contributed by this call. The tape is cleared afterwards.
    """
    tape = active_tape()
    if tape is None:
        raise ContractError("backward called outside of a Tape context")
    return tape.backward(loss)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor._wrap(np.asarray(x, dtype=np.float64))


def _record(out_arr: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    out = Tensor._wrap(out_arr)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._recorded = True
        tape.nodes.append(_Node(out, tuple(inputs), vjp))
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(ad * bd, (a, b),
                   lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g / bd, ad.shape),
                              _unbroadcast(-g * out / bd, bd.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _record(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# linear algebra and reductions

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _record(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    out = a.data.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _record(np.asarray(out), (a,), vjp)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    shape = a.shape
    return _record(np.asarray(a.data.mean()), (a,),
                   lambda g: (np.full(shape, float(g) / n),))


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([t.data for t in ts], axis=ax), ts,
                   lambda g: tuple(np.split(g, splits, axis=ax)))


# activations

def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _record(out, (a,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def log_sigmoid(a) -> Tensor:
    """ln sigmoid(x), stable for large |x|."""
    a = as_tensor(a)
    x = a.data
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return _record(out, (a,), lambda g: (g * _sigmoid(-x),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _record(out, (a,), lambda g: (g * (1.0 - out * out),))


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return _record(a.data * scale, (a,), lambda g: (g * scale,))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = as_tensor(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return _record(out, (a,),
                   lambda g: (out * (g - (g * out).sum(axis=-1, keepdims=True)),))


def activation(x, kind: str) -> Tensor:
    fn = {"sigmoid": sigmoid, "tanh": tanh, "leaky_relu": leaky_relu,
          "softmax": softmax, "softmax_over_last_axis": softmax}.get(kind)
    if fn is None:
        raise ValueError(f"unknown activation {kind!r}")
    return fn(x)


# indexed operations

def scatter_matrix(index: np.ndarray, n: int) -> sp.csr_matrix:
    """Sparse (n x len(index)) matrix that sums column j into row index[j]."""
    m = len(index)
    return sp.csr_matrix((np.ones(m), (index, np.arange(m))), shape=(n, m))


class Segments:
    """Integer segment ids with a cached scatter matrix.

    Reused for every gather/segment reduction over the same edge list.
    """

    def __init__(self, ids, n: int):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.n = int(n)
        if len(self.ids) and (self.ids.min() < 0 or self.ids.max() >= n):
            raise ShapeError(f"segment ids out of range [0, {n})")
        self._mat = None

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def matrix(self) -> sp.csr_matrix:
        if self._mat is None:
            self._mat = scatter_matrix(self.ids, self.n)
        return self._mat

    def reduce(self, values: np.ndarray) -> np.ndarray:
        if values.ndim == 1:
            return np.bincount(self.ids, weights=values, minlength=self.n)
        return np.asarray(self.matrix @ values)


def _as_segments(index, n: int) -> Segments:
    if isinstance(index, Segments):
        return index
    return Segments(np.asarray(index, dtype=np.int64).reshape(-1), n)


def gather_rows(a, index) -> Tensor:
    """Rows of ``a`` selected by an integer index (repeats allowed)."""
    a = as_tensor(a)
    seg = _as_segments(index, a.shape[0])
    return _record(a.data[seg.ids], (a,), lambda g: (seg.reduce(g),))


def segment_sum(values, segments, n: Optional[int] = None) -> Tensor:
    """Sum rows of ``values`` into ``n`` buckets given per-row segment ids."""
    values = as_tensor(values)
    seg = segments if isinstance(segments, Segments) else _as_segments(segments, n)
    if len(seg) != values.shape[0]:
        raise ShapeError(f"segment ids ({len(seg)}) and rows ({values.shape[0]}) differ")
    return _record(seg.reduce(values.data), (values,), lambda g: (g[seg.ids],))


def segment_softmax(scores, segments, n: Optional[int] = None) -> Tensor:
    """Softmax of a 1-d score vector within each segment."""
    scores = as_tensor(scores)
    seg = segments if isinstance(segments, Segments) else _as_segments(segments, n)
    s = scores.data
    if s.ndim != 1 or len(s) != len(seg):
        raise ShapeError(f"segment_softmax expects 1-d scores of length {len(seg)}")
    peak = np.full(seg.n, -np.inf)
    np.maximum.at(peak, seg.ids, s)
    e = np.exp(s - peak[seg.ids])
    out = e / seg.reduce(e)[seg.ids]

    def vjp(g):
        inner = seg.reduce(g * out)
        return (out * (g - inner[seg.ids]),)

    return _record(out, (scores,), vjp)


def dropout(a, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    if rate <= 0.0 or rng is None:
        return as_tensor(a)
    keep = (rng.random(as_tensor(a).shape) >= rate) / (1.0 - rate)
    return mul(a, Tensor._wrap(keep))
