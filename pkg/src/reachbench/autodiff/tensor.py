"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every operation whose inputs require gradients, in
creation order.  Because a node can only be created after its inputs, the
recording order is already topological, so :meth:`Tape.backward` simply walks
it in reverse.  Operations on tensors that are not attached to a tape run as
plain numpy and record nothing, which is how target networks and inference
passes avoid bookkeeping.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64


class Tensor:
    __slots__ = ("value", "grad", "tape", "_parents", "_vjp", "_index", "_entry")
    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, value, tape: "Tape | None" = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.tape = tape
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable | None = None
        self._index = -1
        self._entry = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def requires_grad(self) -> bool:
        return self.tape is not None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)


class Tape:
    """Records operations for a single backward pass (or several accumulating ones)."""

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def _record(self, t: Tensor) -> Tensor:
        t.tape = self
        t._index = len(self.nodes)
        self.nodes.append(t)
        return t

    def variable(self, value) -> Tensor:
        """Leaf whose gradient is stored on the tensor itself (``.grad``)."""
        return self._record(Tensor(value))

    def param(self, params, name: str) -> Tensor:
        """Leaf bound to a :class:`NetParams` entry; gradients accumulate into it."""
        entry = params.entry(name)
        t = Tensor(entry.value)
        t._entry = entry
        return self._record(t)

    def backward(self, root: Tensor) -> None:
        if root.tape is not self:
            raise ValueError("root tensor was not recorded on this tape")
        if root.value.size != 1:
            raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
        nodes = self.nodes
        grads: list[np.ndarray | None] = [None] * len(nodes)
        grads[root._index] = np.ones_like(root.value)
        for i in range(root._index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            grads[i] = None
            node = nodes[i]
            if node._vjp is None:
                if node._entry is not None:
                    node._entry.grad += g
                else:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._vjp(g)):
                if pg is None or p.tape is None:
                    continue
                j = p._index
                grads[j] = pg if grads[j] is None else grads[j] + pg


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value: np.ndarray, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    tape = None
    for p in parents:
        if p.tape is not None:
            tape = p.tape
            break
    out = Tensor(value)
    if tape is None:
        return out
    out._parents = tuple(parents)
    out._vjp = vjp
    return tape._record(out)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# -- elementwise binary ------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def vjp(g):
        ga = _unbroadcast(g * b.value, a.shape) if a.tape is not None else None
        gb = _unbroadcast(g * a.value, b.shape) if b.tape is not None else None
        return ga, gb

    return _node(a.value * b.value, (a, b), vjp)


def minimum(a, b) -> Tensor:
    """Elementwise minimum; ties route the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("minimum", a, b)
    pick_a = a.value <= b.value
    return _node(np.where(pick_a, a.value, b.value), (a, b),
                 lambda g: (_unbroadcast(np.where(pick_a, g, 0.0), a.shape),
                            _unbroadcast(np.where(pick_a, 0.0, g), b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


# -- linear algebra ----------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def vjp(g):
        ga = g @ b.value.T if a.tape is not None else None
        gb = a.value.T @ g if b.tape is not None else None
        return ga, gb

    return _node(a.value @ b.value, (a, b), vjp)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ValueError(f"transpose expects a matrix, got shape {a.shape}")
    return _node(a.value.T, (a,), lambda g: (g.T,))


def conv2d(x, w, b=None, stride: int = 1) -> Tensor:
    """Valid-padding 2-D convolution (cross-correlation).

    x: (N, C, H, W), w: (F, C, k, k), b: (F,) or None -> (N, F, Ho, Wo).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1] or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv2d: incompatible shapes {x.shape} and {w.shape}")
    n, c, h, wd = x.shape
    f, _, k, _ = w.shape
    if h < k or wd < k:
        raise ValueError(f"conv2d: kernel {w.shape} larger than input {x.shape}")
    ho = (h - k) // stride + 1
    wo = (wd - k) // stride + 1
    # channels-last im2col: one contiguous copy, rows ordered (n, i, j), columns (c, ki, kj)
    xl = x.value.transpose(0, 2, 3, 1)
    win = sliding_window_view(xl, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    cols = win.reshape(n * ho * wo, c * k * k)
    wmat = w.value.reshape(f, -1)
    out = cols @ wmat.T
    parents: tuple[Tensor, ...] = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (f,):
            raise ValueError(f"conv2d: bias shape {b.shape} does not match {f} filters")
        out = out + b.value
        parents = (x, w, b)
    out = out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2)

    def vjp(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, f)
        gw = (g2.T @ cols).reshape(w.shape) if w.tape is not None else None
        gx = None
        if x.tape is not None:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, k, k)
            gxl = np.zeros((n, h, wd, c))
            span_h = stride * (ho - 1) + 1
            span_w = stride * (wo - 1) + 1
            for i in range(k):
                for j in range(k):
                    gxl[:, i:i + span_h:stride, j:j + span_w:stride] += dcols[..., i, j]
            gx = gxl.transpose(0, 3, 1, 2)
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _node(out, parents, vjp)


# -- elementwise unary -------------------------------------------------------

def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _node(a.value * mask, (a,), lambda g: (g * mask,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.value)
    return _node(y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.value)
    return _node(y, (a,), lambda g: (g * y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp with zero gradient outside ``[lo, hi]``."""
    a = as_tensor(a)
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _node(s, (a,), lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    s = np.exp(y)
    return _node(y, (a,), lambda g: (g - s * g.sum(axis=axis, keepdims=True),))


# -- reductions and shape ----------------------------------------------------

def _expand(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g, a.shape, axis, keepdims).copy(),))


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return _node(a.value.mean(axis=axis, keepdims=keepdims), (a,),
                 lambda g: (_expand(g / count, a.shape, axis, keepdims).copy(),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def vjp(g):
        out = np.zeros(a.shape)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _node(a.value[index], (a,), vjp)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        value = np.concatenate([t.value for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"concat: incompatible shapes {[t.shape for t in ts]}") from None
    splits = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _node(value, ts, lambda g: tuple(np.split(g, splits, axis=axis)))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        value = a.value.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot reshape {a.shape} into {shape}") from None
    return _node(value, (a,), lambda g: (g.reshape(a.shape),))
