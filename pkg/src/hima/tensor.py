"""Dense tensors with reverse-mode automatic differentiation.

numpy supplies storage and kernels; differentiation is a per-forward tape of
vjp closures that dies with the output tensors. Supported dtypes are real32
and real64 (real64 is the oracle/gradient-test precision). Forward ops are
pure and safe for concurrent read-only use, but a tape belongs to a single
thread of execution.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

from . import counting
from .errors import NumericsError, ShapeError

real32 = np.float32
real64 = np.float64

_GRAD_STACK = [True]
_FINITE_CHECKS = [False]


@contextlib.contextmanager
def no_grad():
    """Disable tape construction inside the block."""
    _GRAD_STACK.append(False)
    try:
        yield
    finally:
        _GRAD_STACK.pop()


def grad_enabled() -> bool:
    return _GRAD_STACK[-1]


def set_finite_checks(on: bool) -> None:
    """Assert that every op output is finite (slow; meant for debugging)."""
    _FINITE_CHECKS[0] = bool(on)


@contextlib.contextmanager
def finite_checks():
    prev = _FINITE_CHECKS[0]
    _FINITE_CHECKS[0] = True
    try:
        yield
    finally:
        _FINITE_CHECKS[0] = prev


class Tensor:
    """N-dimensional real array, optionally tracked by the autodiff tape.

    Images use B,C,H,W order throughout. ``grad`` is populated on leaves
    with ``requires_grad`` after ``backward()`` on a scalar loss.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if np.iscomplexobj(arr):
            raise TypeError("Tensor holds real values; use ComplexPair for spectra")
        if arr.dtype not in (np.dtype(real32), np.dtype(real64)):
            arr = arr.astype(real64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    # -- basic protocol ----------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{flag})"

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    @property
    def _tracked(self) -> bool:
        return self.requires_grad or self._vjp is not None

    # -- autodiff ----------------------------------------------------------

    def backward(self) -> None:
        """Populate grads of all requires_grad leaves under this scalar."""
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.data.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent._tracked and id(parent) not in seen:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent._tracked:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other, self.dtype))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(_constant(other, self.dtype), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    # -- method sugar --------------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def std(self, axis=None, keepdims=False, guard=0.0):
        return tstd(self, axis, keepdims, guard)

    def max(self, axis=None, keepdims=False):
        return tmax(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sqrt(self):
        return sqrt(self)

    def abs(self):
        return absolute(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)

    def flip(self, axis):
        return flip(self, axis)

    def chunk(self, n, axis):
        return chunk(self, n, axis)


def _as_array(value, dtype) -> np.ndarray:
    return np.asarray(value, dtype=dtype)


def _constant(value, dtype) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(_as_array(value, dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], vjp) -> Tensor:
    if _FINITE_CHECKS[0] and not np.all(np.isfinite(data)):
        raise NumericsError("op produced non-finite values")
    out = Tensor(data)
    if _GRAD_STACK[-1] and any(p._tracked for p in parents):
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise kit --------------------------------------------------------


def add(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    bd = b.data if isinstance(b, Tensor) else _as_array(b, a.dtype)
    out = a.data + bd
    if isinstance(b, Tensor):
        return _make(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))
    return _make(out, (a,), lambda g: (_unbroadcast(g, a.data.shape),))


def mul(a, b) -> Tensor:
    if not isinstance(a, Tensor):
        a, b = b, a
    if isinstance(b, Tensor):
        out = a.data * b.data
        return _make(
            out,
            (a, b),
            lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)),
        )
    bd = _as_array(b, a.dtype)
    return _make(a.data * bd, (a,), lambda g: (_unbroadcast(g * bd, a.data.shape),))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def div(a, b) -> Tensor:
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        out = a.data / b.data
        return _make(
            out,
            (a, b),
            lambda g: (
                _unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
            ),
        )
    if isinstance(a, Tensor):
        bd = _as_array(b, a.dtype)
        return _make(a.data / bd, (a,), lambda g: (_unbroadcast(g / bd, a.data.shape),))
    return div(_constant(a, b.dtype), b)


def power(a: Tensor, p) -> Tensor:
    p = float(p)
    out = a.data**p
    return _make(out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * (0.5 / out),))


def absolute(a: Tensor) -> Tensor:
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    out = np.logaddexp(_as_array(0.0, a.dtype), a.data)
    sig = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * sig,))


# -- reductions ---------------------------------------------------------------


def _restore_axes(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    axes = axis if isinstance(axis, tuple) else (axis,)
    if not keepdims:
        for ax in sorted(ax % len(shape) for ax in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


def _check_axis(shape: tuple, axis) -> None:
    if axis is None:
        return
    axes = axis if isinstance(axis, tuple) else (axis,)
    for ax in axes:
        if not -len(shape) <= ax < len(shape):
            raise ShapeError(f"axis {ax} out of range for shape {shape}")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_axis(a.data.shape, axis)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    return _make(np.asarray(out), (a,), lambda g: (_restore_axes(np.asarray(g), shape, axis, keepdims),))


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_axis(a.data.shape, axis)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    shape = a.data.shape
    count = a.data.size if axis is None else np.prod(
        [shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    return _make(
        np.asarray(out), (a,), lambda g: (_restore_axes(np.asarray(g), shape, axis, keepdims) / count,)
    )


def tstd(a: Tensor, axis=None, keepdims=False, guard: float = 0.0) -> Tensor:
    """Population standard deviation; ``guard`` is added under the square root."""
    centered = add(a, neg(tmean(a, axis, True)))
    var = tmean(mul(centered, centered), axis, keepdims)
    return sqrt(add(var, guard) if guard else var)


def tmax(a: Tensor, axis=None, keepdims=False) -> Tensor:
    _check_axis(a.data.shape, axis)
    out = a.data.max(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        full = _restore_axes(np.asarray(g), shape, axis, keepdims)
        peak = _restore_axes(np.asarray(out), shape, axis, keepdims)
        mask = (a.data == peak).astype(a.dtype)
        norm = mask.sum(axis=axis, keepdims=True) if axis is not None else mask.sum()
        if axis is not None:
            norm = np.broadcast_to(norm, shape)
        return (full * mask / norm,)

    return _make(np.asarray(out), (a,), vjp)


# -- shape ops ----------------------------------------------------------------


def reshape(a: Tensor, shape: tuple) -> Tensor:
    old = a.data.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: tuple) -> Tensor:
    inv = tuple(np.argsort(axes))
    return _make(np.ascontiguousarray(a.data.transpose(axes)), (a,), lambda g: (g.transpose(inv),))


def flip(a: Tensor, axis) -> Tensor:
    return _make(np.ascontiguousarray(np.flip(a.data, axis)), (a,), lambda g: (np.flip(g, axis),))


def take(a: Tensor, idx) -> Tensor:
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        return (full,)

    return _make(np.ascontiguousarray(out), (a,), vjp)


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(out, tensors, vjp)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis)


def chunk(a: Tensor, n: int, axis: int) -> list[Tensor]:
    extent = a.data.shape[axis]
    if extent % n:
        raise ShapeError(f"cannot chunk axis {axis} of extent {extent} into {n} equal parts")
    step = extent // n
    index = [slice(None)] * a.data.ndim
    parts = []
    for i in range(n):
        index[axis] = slice(i * step, (i + 1) * step)
        parts.append(take(a, tuple(index)))
    return parts


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands need at least 2 dimensions")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.data.shape} vs {b.data.shape}"
        )
    out = np.matmul(a.data, b.data)
    counting.add("matmul", out.size * a.data.shape[-1])

    def vjp(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        return (_unbroadcast(ga, a.data.shape), _unbroadcast(gb, b.data.shape))

    return _make(out, (a, b), vjp)
