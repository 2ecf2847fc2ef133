"""Differentiable primitive operations on :class:`Tensor`.

Every function accepts Tensors (Python scalars are allowed where noted) and
returns a new Tensor.  Backward rules are written against numpy arrays.
"""

from __future__ import annotations

import builtins
from typing import Sequence

import numpy as np
from scipy.special import erf

from ..errors import ContractError, DimensionError, NumericError
from .tensor import Tensor, as_tensor, record

_SQRT_HALF = np.sqrt(0.5)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor._wrap(np.asarray(b, dtype=a.dtype), "const")
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor._wrap(np.asarray(a, dtype=b.dtype), "const")
    elif not isinstance(a, Tensor):
        a, b = as_tensor(a), as_tensor(b)
    if a.dtype != b.dtype:
        raise ContractError(f"mixed dtypes {a.dtype} and {b.dtype}; cast explicitly")
    return a, b


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot combine shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")
    return record(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")
    return record(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")
    return record(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out = a.data / b.data
    return record(
        "div", out, (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def neg(a: Tensor) -> Tensor:
    return record("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # overflow surfaces as NumericError
        out = np.exp(a.data)
    return record("exp", out, (a,), lambda g: (g * out,))


def sqrt(a: Tensor) -> Tensor:
    if np.any(a.data < 0):
        raise NumericError("sqrt: negative input")
    out = np.sqrt(a.data)
    return record("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def square(a: Tensor) -> Tensor:
    return record("square", a.data * a.data, (a,), lambda g: (2.0 * g * a.data,))


def gelu(a: Tensor) -> Tensor:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _SQRT_HALF))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI

    def back(g):
        return ((g * (cdf + x * pdf)).astype(x.dtype),)

    return record("gelu", (x * cdf).astype(x.dtype), (a,), back)


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select from ``a`` where the constant boolean ``cond`` holds, else ``b``."""
    a, b = _pair(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)
    zero = np.zeros((), dtype=out.dtype)
    return record(
        "where", out, (a, b),
        lambda g: (
            _unbroadcast(np.where(cond, g, zero), a.shape),
            _unbroadcast(np.where(cond, zero, g), b.shape),
        ),
    )


# ----------------------------------------------------------------- reductions

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(ax % ndim for ax in axis))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record("sum", np.asarray(out), (a,), back)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    return mul(sum(a, axis=axes, keepdims=keepdims), 1.0 / count)


# --------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes, batching over leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record("matmul", out, (a, b), back)


# ------------------------------------------------------------------ shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}") from None
    return record("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(int(ax) for ax in axes)
    if sorted(ax % a.ndim for ax in axes) != list(range(a.ndim)):
        raise DimensionError(f"permute: {axes} is not a permutation of {a.ndim} axes")
    inverse = np.argsort([ax % a.ndim for ax in axes])
    return record(
        "permute", np.transpose(a.data, axes), (a,),
        lambda g: (np.transpose(g, inverse),),
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ContractError("concat: no tensors")
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ContractError(f"concat: mixed dtypes {dtypes}")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat: shapes {shapes} disagree off axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", out, tensors, back)


def split(a: Tensor, sections: int | Sequence[int], axis: int = 0) -> list[Tensor]:
    """Split into equal ``sections`` or at the explicit sizes given."""
    n = a.shape[axis]
    if isinstance(sections, int):
        if n % sections:
            raise DimensionError(f"split: axis of length {n} not divisible by {sections}")
        sizes = [n // sections] * sections
    else:
        sizes = list(sections)
        if builtins.sum(sizes) != n:
            raise DimensionError(f"split: sizes {sizes} do not add up to {n}")
    parts, start = [], 0
    for size in sizes:
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(start, start + size)
        parts.append(getitem(a, tuple(idx)))
        start += size
    return parts


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; advanced indexing goes through :func:`take`."""
    out = a.data[key]

    def back(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        full[key] = g
        return (full,)

    return record("getitem", np.array(out), (a,), back)


def take(a: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis`` with integer ``indices`` (repeats allowed)."""
    indices = np.asarray(indices, dtype=np.intp)
    axis = axis % a.ndim
    out = np.take(a.data, indices, axis=axis)

    def back(g):
        full = np.zeros(a.shape, dtype=a.dtype)
        moved = np.moveaxis(full, axis, 0)
        np.add.at(moved, indices, np.moveaxis(g, axis, 0))
        return (full,)

    return record("take", out, (a,), back)


def roll(a: Tensor, shifts: Sequence[int], axes: Sequence[int]) -> Tensor:
    shifts, axes = tuple(shifts), tuple(axes)
    if not any(shifts):
        return a
    back_shifts = tuple(-s for s in shifts)
    return record(
        "roll", np.roll(a.data, shifts, axes), (a,),
        lambda g: (np.roll(g, back_shifts, axes),),
    )


def reflect_indices(n: int, before: int, after: int) -> np.ndarray:
    """Indices that reflect-pad a length-``n`` axis (edge sample not repeated)."""
    if n == 1:
        return np.zeros(n + before + after, dtype=np.intp)
    return np.pad(np.arange(n), (before, after), mode="reflect")


def pad_reflect(a: Tensor, pads: dict[int, tuple[int, int]]) -> Tensor:
    """Reflect-pad the axes listed in ``pads`` as ``{axis: (before, after)}``."""
    out = a
    for axis, (before, after) in sorted(pads.items()):
        if before or after:
            out = take(out, reflect_indices(out.shape[axis], before, after), axis)
    return out


def cast(a: Tensor, dtype) -> Tensor:
    dtype = np.dtype(dtype)
    if a.dtype == dtype:
        return a
    src = a.dtype
    return record("cast", a.data.astype(dtype), (a,), lambda g: (g.astype(src),))


# ------------------------------------------------------------- fused kernels

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return record("softmax", out, (a,), back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gamma * xhat + beta``."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(
            f"layer_norm: channel axis {c} vs gamma {gamma.shape}, beta {beta.shape}"
        )
    if not (x.dtype == gamma.dtype == beta.dtype):
        raise ContractError("layer_norm: mixed dtypes")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gamma.data + beta.data
    lead = tuple(range(x.ndim - 1))

    def back(g):
        gx_hat = g * gamma.data
        gx = inv * (
            gx_hat
            - gx_hat.mean(axis=-1, keepdims=True)
            - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True)
        )
        return gx.astype(x.dtype), (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return record("layer_norm", out.astype(x.dtype), (x, gamma, beta), back)
