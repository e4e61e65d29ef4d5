"""Reverse-mode automatic differentiation over numpy arrays.

A small define-by-run tape: every operation records its parent nodes together
with vector-Jacobian closures that are themselves written with traced
operations. Because the backward pass builds ordinary graph nodes, gradients
returned by :func:`grad` can be differentiated again — the one level of
nesting the training code needs (parameter gradients of an input-gradient
norm). Everything runs in double precision.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tensor",
    "as_tensor",
    "constant",
    "grad",
    "concat",
    "exp",
    "log",
    "sqrt",
    "tanh",
    "sigmoid",
    "relu",
    "clip",
    "softmax",
    "matmul",
    "stop_gradient",
    "where_mask",
]


class Tensor:
    """One array-valued node in the computation graph."""

    __slots__ = ("value", "requires_grad", "_pairs")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._pairs: tuple = ()

    # -- construction helpers -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> "Tensor":
        return Tensor(self.value)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.value.shape}{flag})"

    # -- operators -------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    """A graph leaf that never receives gradient."""
    return Tensor(x)


def _node(value: np.ndarray, pairs) -> Tensor:
    """Build a graph node, keeping only parents that can receive gradient."""
    kept = tuple((p, fn) for p, fn in pairs if p.requires_grad)
    out = Tensor(value, requires_grad=bool(kept))
    out._pairs = kept
    return out


def _unbroadcast(g: Tensor, shape: tuple[int, ...]) -> Tensor:
    """Sum ``g`` down to ``shape`` (the reverse of numpy broadcasting)."""
    while g.value.ndim > len(shape):
        g = tensor_sum(g, axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.value.shape[axis] != 1:
            g = tensor_sum(g, axis=axis, keepdims=True)
    return g


# -- arithmetic -----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        [
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(neg(g), b.value.shape)),
        ],
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        [
            (a, lambda g: _unbroadcast(mul(g, b), a.value.shape)),
            (b, lambda g: _unbroadcast(mul(g, a), b.value.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value / b.value,
        [
            (a, lambda g: _unbroadcast(div(g, b), a.value.shape)),
            (b, lambda g: _unbroadcast(neg(div(mul(g, div(a, b)), b)), b.value.shape)),
        ],
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.value, [(a, lambda g: neg(g))])


def power(a, exponent: float) -> Tensor:
    """Elementwise power with a constant exponent."""
    a = as_tensor(a)
    k = float(exponent)
    return _node(
        a.value**k,
        [(a, lambda g: mul(g, mul(constant(k), power(a, k - 1.0))))],
    )


def _rebuild(out: Tensor, pairs) -> Tensor:
    """Attach vjp pairs referencing an already-built output node."""
    kept = tuple((p, fn) for p, fn in pairs if p.requires_grad)
    out.requires_grad = bool(kept)
    out._pairs = kept
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.value))
    return _rebuild(out, [(a, lambda g: mul(g, out))])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.value), [(a, lambda g: div(g, a))])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sqrt(a.value))
    return _rebuild(out, [(a, lambda g: div(g, mul(constant(2.0), out)))])


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.value))
    return _rebuild(out, [(a, lambda g: mul(g, sub(constant(1.0), mul(out, out))))])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # 1/(1+exp(-x)) evaluated stably on both tails.
    v = a.value
    z = np.exp(-np.abs(v))
    out = Tensor(np.where(v >= 0, 1.0 / (1.0 + z), z / (1.0 + z)))
    return _rebuild(out, [(a, lambda g: mul(g, mul(out, sub(constant(1.0), out))))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = (a.value > 0).astype(np.float64)
    return _node(a.value * mask, [(a, lambda g: mul(g, constant(mask)))])


def clip(a, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient passes only through the unclipped region."""
    a = as_tensor(a)
    mask = ((a.value >= lo) & (a.value <= hi)).astype(np.float64)
    return _node(np.clip(a.value, lo, hi), [(a, lambda g: mul(g, constant(mask)))])


def where_mask(mask: np.ndarray, a, b) -> Tensor:
    """``mask`` is a constant boolean array selecting between two tensors."""
    a, b = as_tensor(a), as_tensor(b)
    m = mask.astype(np.float64)
    return add(mul(constant(m), a), mul(constant(1.0 - m), b))


def stop_gradient(a) -> Tensor:
    return as_tensor(a).detach()


# -- linear algebra ---------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.value.shape} @ {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} @ {b.value.shape}")
    return _node(
        a.value @ b.value,
        [
            (a, lambda g: matmul(g, transpose(b))),
            (b, lambda g: matmul(transpose(a), g)),
        ],
    )


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _node(a.value.T, [(a, lambda g: transpose(g))])


def reshape(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    old = a.value.shape
    return _node(a.value.reshape(shape), [(a, lambda g: reshape(g, old))])


def broadcast_to(a, shape: tuple[int, ...]) -> Tensor:
    a = as_tensor(a)
    return _node(
        np.broadcast_to(a.value, shape).copy(),
        [(a, lambda g: _unbroadcast(g, a.value.shape))],
    )


# -- reductions -------------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    in_shape = a.value.shape

    def backward(g: Tensor) -> Tensor:
        if axis is None:
            return broadcast_to(reshape(g, (1,) * len(in_shape)), in_shape)
        if not keepdims:
            kept_shape = list(in_shape)
            kept_shape[axis] = 1
            g = reshape(g, tuple(kept_shape))
        return broadcast_to(g, in_shape)

    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), [(a, backward)])


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        count = a.value.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), constant(1.0 / count))


# -- structure --------------------------------------------------------------------


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    in_shape = a.value.shape

    def backward(g: Tensor) -> Tensor:
        return scatter(g, in_shape, key)

    return _node(a.value[key], [(a, backward)])


def scatter(g, shape: tuple[int, ...], key) -> Tensor:
    """Place ``g`` into a zero array of ``shape`` at ``key`` (adjoint of getitem)."""
    g = as_tensor(g)
    out = np.zeros(shape, dtype=np.float64)
    out[key] = g.value
    return _node(out, [(g, lambda gg: getitem(gg, key))])


def concat(parts: Sequence, axis: int = 1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    widths = [p.value.shape[axis] for p in parts]
    offsets = np.concatenate([[0], np.cumsum(widths)])

    def make_backward(i: int):
        start, stop = int(offsets[i]), int(offsets[i + 1])

        def backward(g: Tensor) -> Tensor:
            index = [slice(None)] * g.value.ndim
            index[axis] = slice(start, stop)
            return getitem(g, tuple(index))

        return backward

    value = np.concatenate([p.value for p in parts], axis=axis)
    return _node(value, [(p, make_backward(i)) for i, p in enumerate(parts)])


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift carries no gradient."""
    a = as_tensor(a)
    axis = axis % a.value.ndim
    shift = constant(np.max(a.value, axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tensor_sum(e, axis=axis, keepdims=True))


# -- differentiation ---------------------------------------------------------------


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._pairs:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def grad(output: Tensor, inputs: Sequence[Tensor]) -> list[Tensor]:
    """Gradients of a scalar ``output`` with respect to ``inputs``.

    The returned tensors stay connected to the graph, so they can be fed into
    further traced computation and differentiated once more.
    """
    if output.value.size != 1:
        raise ShapeError(f"grad expects a scalar output, got shape {output.value.shape}")
    adjoint: dict[int, Tensor] = {id(output): constant(np.ones_like(output.value))}
    for node in reversed(_toposort(output)):
        g = adjoint.get(id(node))
        if g is None:
            continue
        for parent, backward in node._pairs:
            piece = backward(g)
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = piece if prev is None else add(prev, piece)
    return [
        adjoint.get(id(t), constant(np.zeros_like(t.value)))
        for t in inputs
    ]
