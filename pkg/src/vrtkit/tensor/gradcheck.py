"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ..errors import ContractError
from .tensor import Tape, Tensor


def _scalar(y: Tensor) -> float:
    if not isinstance(y, Tensor) or y.size != 1:
        shape = getattr(y, "shape", type(y).__name__)
        raise ContractError(f"grad_check needs a scalar-valued function, got {shape}")
    return float(y.data.reshape(()))


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, step: float | None = None
) -> np.ndarray:
    """Central differences with step ``1e-6 * max(1, |x_i|)`` unless given."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        h = step if step is not None else 1e-6 * max(1.0, abs(orig))
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, step: float | None = None) -> float:
    """Max relative error between tape and finite-difference gradients of ``f`` at ``x``.

    The error per coordinate is ``|a - n| / max(1, |a|, |n|)``.
    """
    return grad_check_many(lambda xs: f(xs[0]), [x], step)[0]


def grad_check_many(
    f: Callable[[list[Tensor]], Tensor],
    inputs: Sequence[Tensor],
    step: float | None = None,
) -> list[float]:
    """Like :func:`grad_check` for a function of several tensors.

    Returns one max relative error per input.
    """
    for t in inputs:
        if t.dtype != np.float64:
            raise ContractError("gradient checks require float64 inputs")
    leaves = [Tensor(t.data, requires_grad=True) for t in inputs]
    with Tape() as tape:
        y = f(leaves)
    _scalar(y)
    grads = tape.backward(y)
    errors = []
    for k, leaf in enumerate(leaves):
        def probe(arr, k=k):
            args = list(leaves)
            args[k] = Tensor(arr, dtype=np.float64)
            return _scalar(f(args))

        numeric = numeric_gradient(probe, leaf.data, step)
        errors.append(relative_error(grads[leaf], numeric))
    return errors
