"""Dense float64 tensors with a reverse-mode tape.

Every primitive records its parents and a vector-Jacobian product (VJP). The VJPs are
themselves written with :class:`Tensor` operations, so the backward pass produces new
tensors that are part of the tape. This makes gradients differentiable again, which the
attacks need to differentiate a function of the parameter gradient with respect to the
input.
"""

import os
from contextlib import contextmanager
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numba import njit

_DEBUG_CHECKS = os.environ.get("BAYESLEAK_DEBUG_CHECKS", "0") == "1"


class NonFiniteError(FloatingPointError):
    """Raised when a tensor contains NaN or Inf."""


class UnsupportedPrimitiveError(NotImplementedError):
    """Raised when the backward pass reaches a primitive without a derivative."""


@contextmanager
def debug_checks(enabled: bool = True):
    """Check every operation result for NaN/Inf while inside the block."""
    global _DEBUG_CHECKS
    previous = _DEBUG_CHECKS
    _DEBUG_CHECKS = enabled
    try:
        yield
    finally:
        _DEBUG_CHECKS = previous


def _check_finite(data: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name} produced non-finite values")


@njit(cache=True)
def _scatter_add(values, indices, size):
    out = np.zeros(size, dtype=np.float64)
    for i in range(indices.size):
        out[indices[i]] += values[i]
    return out


class Op:
    """A primitive operation.

    Args:
        name: Name of the primitive, used in error messages and by :class:`Trace`.
        forward: Function computing the output array from the parent arrays.
        vjp: Function ``vjp(g, node, needs)`` returning one cotangent tensor (or None) per
            parent. ``needs`` flags which parents actually require a cotangent. None for
            primitives that have no derivative.
    """

    __slots__ = ("name", "forward", "vjp")

    def __init__(self, name: str, forward: Callable, vjp: Optional[Callable]):
        self.name = name
        self.forward = forward
        self.vjp = vjp

    def __call__(self, *parents, **params) -> "Tensor":
        parents = tuple(as_tensor(p) for p in parents)
        data = self.forward(*(p.data for p in parents), **params)
        return Tensor(data, op=self, parents=parents, params=params)

    def __repr__(self):
        return f"Op({self.name})"


class Tensor:
    """Immutable dense array of 64-bit floats that remembers how it was computed.

    Leaves (tensors without an op) are always checked for finiteness. Results of
    operations are only checked when debug checks are enabled.
    """

    __slots__ = ("data", "op", "parents", "params")
    __array_priority__ = 100
    # make numpy defer to the reflected Tensor operators
    __array_ufunc__ = None

    def __init__(self, data, op: Optional[Op] = None, parents=(), params=None):
        if op is None:
            data = np.array(data, dtype=np.float64)
            _check_finite(data, "tensor construction")
        else:
            data = np.asarray(data, dtype=np.float64)
            if _DEBUG_CHECKS:
                _check_finite(data, op.name)
        data.setflags(write=False)
        self.data = data
        self.op = op
        self.parents = parents
        self.params = params or {}

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self.op is None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self.data.item()

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        op = self.op.name if self.op is not None else "leaf"
        return f"Tensor({self.data!r}, op={op})"

    def __len__(self):
        return self.shape[0]

    # arithmetic
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent):
        if exponent != 2:
            raise ValueError("only squaring is supported, use mul/sqrt/exp/log")
        return mul(self, self)

    # unary primitives
    def relu(self):
        return relu(self)

    def log(self):
        return log(self)

    def exp(self):
        return exp(self)

    def abs(self):
        return absolute(self)

    def sqrt(self):
        return sqrt(self)

    def sign(self):
        return sign(self)

    def clip(self, lo: float, hi: float):
        return clip(self, lo=lo, hi=hi)

    def sum(self, axis=None):
        return tensor_sum(self, axis=axis)

    def reshape(self, shape):
        if isinstance(shape, int):
            shape = (shape,)
        shape = tuple(int(s) for s in shape)
        if -1 in shape:
            shape = np.empty(self.shape).reshape(shape).shape
        return reshape(self, shape=shape)

    def flatten(self):
        return self.reshape((self.size,))

    @property
    def T(self):
        return transpose(self)

    def take(self, indices):
        return take(self, indices=np.asarray(indices, dtype=np.int64))

    def broadcast_to(self, shape):
        return broadcast_to(self, shape=tuple(shape))


def as_tensor(value) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def constant(value) -> Tensor:
    """Wrap a value as a leaf tensor (a copy; the tape stops here)."""
    if isinstance(value, Tensor):
        return Tensor(value.data)
    return Tensor(value)


def sum_to(t: Tensor, shape: Tuple[int, ...]) -> Tensor:
    """Sum ``t`` down to ``shape``, undoing numpy broadcasting."""
    shape = tuple(shape)
    if t.shape == shape:
        return t
    lead = t.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(
        i + lead for i, s in enumerate(shape) if s == 1 and t.shape[i + lead] != 1
    )
    reduced = tensor_sum(t, axis=axes) if axes else t
    if reduced.shape != shape:
        reduced = reduced.reshape(shape)
    return reduced


def _add_vjp(g, node, needs):
    a, b = node.parents
    return (
        sum_to(g, a.shape) if needs[0] else None,
        sum_to(g, b.shape) if needs[1] else None,
    )


def _sub_vjp(g, node, needs):
    a, b = node.parents
    return (
        sum_to(g, a.shape) if needs[0] else None,
        sum_to(neg(g), b.shape) if needs[1] else None,
    )


def _mul_vjp(g, node, needs):
    a, b = node.parents
    return (
        sum_to(g * b, a.shape) if needs[0] else None,
        sum_to(g * a, b.shape) if needs[1] else None,
    )


def _div_vjp(g, node, needs):
    a, b = node.parents
    return (
        sum_to(g / b, a.shape) if needs[0] else None,
        sum_to(neg(g * node / b), b.shape) if needs[1] else None,
    )


def _neg_vjp(g, node, needs):
    return (neg(g),)


def _outer(u: Tensor, v: Tensor) -> Tensor:
    return matmul(u.reshape((u.size, 1)), v.reshape((1, v.size)))


def _matmul_forward(a, b):
    if a.ndim == 0 or b.ndim == 0 or a.ndim > 2 or b.ndim > 2:
        raise ValueError(f"matmul needs 1-D or 2-D operands, got {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _matmul_vjp(g, node, needs):
    a, b = node.parents
    ga = gb = None
    if a.ndim == 2 and b.ndim == 2:
        if needs[0]:
            ga = g @ b.T
        if needs[1]:
            gb = a.T @ g
    elif a.ndim == 2 and b.ndim == 1:
        if needs[0]:
            ga = _outer(g, b)
        if needs[1]:
            gb = a.T @ g
    elif a.ndim == 1 and b.ndim == 2:
        if needs[0]:
            ga = b @ g
        if needs[1]:
            gb = _outer(a, g)
    else:
        if needs[0]:
            ga = g * b
        if needs[1]:
            gb = g * a
    return ga, gb


def _relu_vjp(g, node, needs):
    (a,) = node.parents
    # subgradient 0 at exactly 0
    return (g * Tensor(a.data > 0),)


def _abs_vjp(g, node, needs):
    (a,) = node.parents
    return (g * Tensor(np.sign(a.data)),)


def _clip_vjp(g, node, needs):
    (a,) = node.parents
    inside = (a.data >= node.params["lo"]) & (a.data <= node.params["hi"])
    return (g * Tensor(inside),)


def _log_vjp(g, node, needs):
    (a,) = node.parents
    return (g / a,)


def _exp_vjp(g, node, needs):
    return (g * node,)


def _sqrt_vjp(g, node, needs):
    return (g * 0.5 / node,)


def _sum_forward(a, axis=None):
    return np.sum(a, axis=axis)


def _sum_vjp(g, node, needs):
    (a,) = node.parents
    axis = node.params["axis"]
    if axis is None:
        return (broadcast_to(g, shape=a.shape),)
    axes = (axis,) if isinstance(axis, int) else axis
    axes = tuple(ax % a.ndim for ax in axes)
    kept = tuple(1 if i in axes else s for i, s in enumerate(a.shape))
    return (broadcast_to(g.reshape(kept), shape=a.shape),)


def _broadcast_to_vjp(g, node, needs):
    (a,) = node.parents
    return (sum_to(g, a.shape),)


def _reshape_vjp(g, node, needs):
    (a,) = node.parents
    return (reshape(g, shape=a.shape),)


def _transpose_vjp(g, node, needs):
    return (transpose(g),)


def _take_forward(a, indices):
    if a.ndim != 1:
        raise ValueError("take works on 1-D tensors, flatten first")
    return a[indices]


def _take_vjp(g, node, needs):
    (a,) = node.parents
    return (scatter(g, indices=node.params["indices"], size=a.size),)


def _scatter_forward(a, indices, size):
    return _scatter_add(np.ascontiguousarray(a, dtype=np.float64), indices, size)


def _scatter_vjp(g, node, needs):
    return (take(g, indices=node.params["indices"]),)


def _concat_forward(*arrays):
    return np.concatenate([np.reshape(a, -1) for a in arrays])


def _concat_vjp(g, node, needs):
    cotangents = []
    offset = 0
    for parent, need in zip(node.parents, needs):
        n = parent.size
        if need:
            piece = take(g, indices=np.arange(offset, offset + n, dtype=np.int64))
            cotangents.append(piece.reshape(parent.shape))
        else:
            cotangents.append(None)
        offset += n
    return tuple(cotangents)


add = Op("add", np.add, _add_vjp)
sub = Op("sub", np.subtract, _sub_vjp)
mul = Op("mul", np.multiply, _mul_vjp)
div = Op("div", np.divide, _div_vjp)
neg = Op("neg", np.negative, _neg_vjp)
matmul = Op("matmul", _matmul_forward, _matmul_vjp)
relu = Op("relu", lambda a: np.maximum(a, 0.0), _relu_vjp)
absolute = Op("abs", np.abs, _abs_vjp)
clip = Op("clip", lambda a, lo, hi: np.clip(a, lo, hi), _clip_vjp)
log = Op("log", np.log, _log_vjp)
exp = Op("exp", np.exp, _exp_vjp)
sqrt = Op("sqrt", np.sqrt, _sqrt_vjp)
sign = Op("sign", np.sign, None)
tensor_sum = Op("sum", _sum_forward, _sum_vjp)
broadcast_to = Op("broadcast_to", lambda a, shape: np.broadcast_to(a, shape), _broadcast_to_vjp)
reshape = Op("reshape", lambda a, shape: np.reshape(a, shape), _reshape_vjp)
transpose = Op("transpose", np.transpose, _transpose_vjp)
take = Op("take", _take_forward, _take_vjp)
scatter = Op("scatter", _scatter_forward, _scatter_vjp)
_concat = Op("concat", _concat_forward, _concat_vjp)


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Flatten and concatenate tensors into one vector."""
    if not tensors:
        raise ValueError("nothing to concatenate")
    return _concat(*tensors)


PRIMITIVES = {
    op.name: op
    for op in (
        add,
        sub,
        mul,
        div,
        neg,
        matmul,
        relu,
        absolute,
        clip,
        log,
        exp,
        sqrt,
        sign,
        tensor_sum,
        broadcast_to,
        reshape,
        transpose,
        take,
        scatter,
        _concat,
    )
}
