"""Dense tensors with reverse-mode autodiff on an explicit recording tape.

Everything that trains in this package (planner, executor, projector) runs on
this engine. Values live in contiguous numpy buffers; every differentiable
operation executed while a tape is active appends one record (output, inputs,
backward rules). ``backward`` walks the tape in reverse, visiting each record
once and accumulating gradients additively at fan-out. Tensors with
``requires_grad=False`` never receive a gradient buffer, which is what lets a
frozen model sit in the middle of a trainable graph.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
from scipy import special as _special

__all__ = [
    "Tensor",
    "Tape",
    "ShapeError",
    "ContractError",
    "tape",
    "no_grad",
    "backward",
    "set_default_dtype",
    "default_dtype",
    "set_checked",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "reshape",
    "swapaxes",
    "concat",
    "narrow",
    "take_rows",
    "tsum",
    "tmean",
    "gelu",
    "softmax",
    "softmax_cross_entropy",
    "rmsnorm",
]


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class ContractError(RuntimeError):
    """A documented precondition was violated."""


_DEFAULT_DTYPE = np.dtype(np.float32)
_CHECKED = False

_INV_SQRT2 = 0.7071067811865475244
_INV_SQRT_2PI = 0.3989422804014326779


def set_default_dtype(dtype) -> None:
    """Set the dtype used for tensors built from plain Python data."""
    global _DEFAULT_DTYPE
    dt = np.dtype(dtype)
    if dt.kind != "f":
        raise ContractError(f"default dtype must be floating, got {dt}")
    _DEFAULT_DTYPE = dt


def default_dtype() -> np.dtype:
    return _DEFAULT_DTYPE


def set_checked(flag: bool) -> None:
    """In checked mode, non-finite values are rejected at construction."""
    global _CHECKED
    _CHECKED = bool(flag)


class Tensor:
    """A dense row-major array plus autodiff bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            raise TypeError("wrap raw data, not another Tensor")
        if dtype is not None:
            arr = np.asarray(data, dtype=np.dtype(dtype))
        else:
            arr = np.asarray(data)
            if arr.dtype.kind != "f":
                arr = arr.astype(_DEFAULT_DTYPE)
        arr = np.ascontiguousarray(arr)
        if _CHECKED and arr.dtype.kind == "f" and not np.isfinite(arr).all():
            raise ContractError("non-finite values rejected in checked mode")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    # -- inspection --------------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}{flag})"

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, _coerce(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other, self))

    def __rsub__(self, other):
        return sub(_coerce(other, self), self)

    def __mul__(self, other):
        return mul(self, _coerce(other, self))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _coerce(other, self))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self) -> None:
        backward(self)


def _coerce(value, like: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=like.dtype))


# -- tape ------------------------------------------------------------------

GradFn = Callable[[np.ndarray], np.ndarray]


class Tape:
    """Ordered record of executed operations, in topological order.

    Each record is ``(output, parents, grad_fns)`` where ``grad_fns[i]`` maps
    the output gradient to the contribution for ``parents[i]`` (already in
    that parent's exact shape).
    """

    __slots__ = ("records",)

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], tuple[GradFn | None, ...]]] = []

    def __len__(self) -> int:
        return len(self.records)

    def clear(self) -> None:
        self.records.clear()


_tape_stack: list[Tape | None] = [None]


@contextlib.contextmanager
def tape():
    """Activate a fresh tape; ops executed inside are recorded on it."""
    t = Tape()
    _tape_stack.append(t)
    try:
        yield t
    finally:
        _tape_stack.pop()


@contextlib.contextmanager
def no_grad():
    """Suspend recording (inference / frozen sampling)."""
    _tape_stack.append(None)
    try:
        yield
    finally:
        _tape_stack.pop()


def _active() -> Tape | None:
    return _tape_stack[-1]


def _record(out: Tensor, parents: Sequence[Tensor], grad_fns: Sequence[GradFn | None]) -> Tensor:
    t = _active()
    if t is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        t.records.append((out, tuple(parents), tuple(grad_fns)))
    return out


def backward(loss: Tensor) -> None:
    """Reverse traversal from a scalar loss; fills ``grad`` buffers.

    Visits each tape record exactly once. Gradients for tensors with
    ``requires_grad=False`` are neither computed nor stored.
    """
    if loss.size != 1:
        raise ContractError(f"backward expects a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    t = _active()
    if t is None:
        raise ContractError("backward called with no active tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
    holders: dict[int, Tensor] = {id(loss): loss}

    for out, parents, grad_fns in reversed(t.records):
        g = pending.pop(id(out), None)
        if g is None:
            continue
        _deposit(holders.pop(id(out)), g)
        for parent, fn in zip(parents, grad_fns):
            if fn is None or not parent.requires_grad:
                continue
            contrib = fn(g)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contrib
            else:
                pending[key] = contrib
                holders[key] = parent

    for key, g in pending.items():
        _deposit(holders[key], g)


def _deposit(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.shape:
        raise ShapeError(f"gradient shape {g.shape} != tensor shape {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad = t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data)
    return _record(
        out,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data - b.data)
    return _record(
        out,
        (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(-g, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)
    return _record(out, (a,), (lambda g: -g,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = Tensor(ad * bd)
    return _record(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g * bd, a.shape),
            lambda g: _unbroadcast(g * ad, b.shape),
        ),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    out = Tensor(ad / bd)
    return _record(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g / bd, a.shape),
            lambda g: _unbroadcast(-g * ad / (bd * bd), b.shape),
        ),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; supports stacked (batched) operands via numpy rules."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with ndim >= 2")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"inner dimensions differ: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    out = Tensor(ad @ bd)
    return _record(
        out,
        (a, b),
        (
            lambda g: _unbroadcast(g @ np.swapaxes(bd, -1, -2), a.shape),
            lambda g: _unbroadcast(np.swapaxes(ad, -1, -2) @ g, b.shape),
        ),
    )


# -- shape manipulation ----------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), (lambda g: g.reshape(orig),))


def swapaxes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    out = Tensor(np.ascontiguousarray(np.swapaxes(a.data, ax1, ax2)))
    return _record(out, (a,), (lambda g: np.swapaxes(g, ax1, ax2),))


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    offsets = np.cumsum([0] + [p.shape[axis] for p in parts])

    def make_fn(i: int) -> GradFn:
        lo, hi = offsets[i], offsets[i + 1]

        def fn(g: np.ndarray) -> np.ndarray:
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return fn

    return _record(out, tuple(parts), tuple(make_fn(i) for i in range(len(parts))))


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}"
        )
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    out = Tensor(np.ascontiguousarray(a.data[index]))
    shape = a.shape
    dtype = a.dtype

    def fn(g: np.ndarray) -> np.ndarray:
        buf = np.zeros(shape, dtype=dtype)
        buf[index] = g
        return buf

    return _record(out, (a,), (fn,))


def take_rows(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a 2-D table (embedding lookup)."""
    if table.ndim != 2:
        raise ShapeError("take_rows expects a 2-D table")
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeError("take_rows expects a 1-D id vector")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError("row id out of range")
    out = Tensor(table.data[ids])
    shape = table.shape
    dtype = table.dtype

    def fn(g: np.ndarray) -> np.ndarray:
        buf = np.zeros(shape, dtype=dtype)
        np.add.at(buf, ids, g)
        return buf

    return _record(out, (table,), (fn,))


# -- reductions ------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims))
    shape = a.shape

    def fn(g: np.ndarray) -> np.ndarray:
        if axis is None:
            return np.broadcast_to(g, shape).astype(g.dtype, copy=True)
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        return np.broadcast_to(g, shape).astype(g.dtype, copy=True)

    return _record(out, (a,), (fn,))


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.size if axis is None else np.prod(
        [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))]
    )
    s = tsum(a, axis=axis, keepdims=keepdims)
    return mul(s, Tensor(np.asarray(1.0 / count, dtype=a.dtype)))


# -- nonlinearities --------------------------------------------------------


def gelu(a: Tensor) -> Tensor:
    """Exact-erf GELU: x * Phi(x) with Phi the standard normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + _special.erf(x * _INV_SQRT2))
    out = Tensor(x * cdf)

    def fn(g: np.ndarray) -> np.ndarray:
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return g * (cdf + x * pdf)

    return _record(out, (a,), (fn,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def fn(g: np.ndarray) -> np.ndarray:
        return (g - (g * y).sum(axis=axis, keepdims=True)) * y

    return _record(out, (a,), (fn,))


def softmax_cross_entropy(logits: Tensor, targets, mask=None) -> Tensor:
    """Sum of -log softmax(logits)[i, targets[i]] over masked positions.

    ``logits`` is (L, V); ``targets`` holds L token ids; ``mask`` selects the
    positions that contribute. Stabilized by row-max subtraction. The empty
    mask returns 0 by the empty-sum convention.
    """
    if logits.ndim != 2:
        raise ShapeError(f"logits must be (L, V), got {logits.shape}")
    length, vocab = logits.shape
    ids = np.asarray(targets, dtype=np.int64)
    if ids.shape != (length,):
        raise ShapeError(f"targets must have length {length}, got {ids.shape}")
    if mask is None:
        sel = np.ones(length, dtype=bool)
    else:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != (length,):
            raise ShapeError(f"mask must have length {length}, got {sel.shape}")
    if sel.any():
        picked = ids[sel]
        if picked.min() < 0 or picked.max() >= vocab:
            raise IndexError("target id out of vocabulary")

    x = logits.data
    m = x.max(axis=1, keepdims=True)
    z = x - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    per_pos = (lse[:, 0] + m[:, 0]) - x[np.arange(length), ids]
    total = per_pos[sel].sum() if sel.any() else np.asarray(0.0, dtype=x.dtype)
    out = Tensor(np.asarray(total, dtype=x.dtype))

    def fn(g: np.ndarray) -> np.ndarray:
        probs = np.exp(z - lse)
        d = probs
        d[np.arange(length), ids] -= 1.0
        d *= sel[:, None]
        return (d * g).astype(x.dtype, copy=False)

    return _record(out, (logits,), (fn,))


def rmsnorm(x: Tensor, gain: Tensor, eps: float) -> Tensor:
    """Root-mean-square normalization over the last axis, scaled by ``gain``."""
    if eps <= 0:
        raise ContractError("rmsnorm eps must be positive")
    if gain.ndim != 1 or gain.shape[0] != x.shape[-1]:
        raise ShapeError(f"gain shape {gain.shape} does not match last dim of {x.shape}")
    xd, gd = x.data, gain.data
    dim = xd.shape[-1]
    ms = (xd * xd).mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(ms + eps)
    y = xd * r * gd
    out = Tensor(y)

    def fn_x(g: np.ndarray) -> np.ndarray:
        u = g * gd
        return r * u - xd * (r**3 / dim) * (u * xd).sum(axis=-1, keepdims=True)

    def fn_gain(g: np.ndarray) -> np.ndarray:
        t = g * xd * r
        return t.reshape(-1, dim).sum(axis=0)

    return _record(out, (x, gain), (fn_x, fn_gain))
