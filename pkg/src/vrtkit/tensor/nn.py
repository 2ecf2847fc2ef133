"""Layer-level kernels: linear maps, MLPs, normalization, convolution, resizing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, ContractError, DimensionError, NumericError
from . import ops
from .tensor import Tensor, record

LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class LinearWeights:
    """``y = x @ weight + bias`` with ``weight`` stored as ``[in, out]``."""

    weight: Tensor
    bias: Tensor | None = None

    def __post_init__(self):
        if self.weight.ndim != 2:
            raise DimensionError(f"linear weight must be rank 2, got {self.weight.shape}")
        if self.bias is not None and self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(
                f"bias shape {self.bias.shape} != ({self.weight.shape[1]},)"
            )

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]


@dataclass(frozen=True)
class NormWeights:
    gamma: Tensor
    beta: Tensor


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD, dtype=np.float32):
    """Normal samples with std ``std``, redrawn until inside two std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def init_linear(rng, c_in: int, c_out: int, dtype=np.float32, bias: bool = True) -> LinearWeights:
    w = Tensor(trunc_normal(rng, (c_in, c_out), dtype=dtype), requires_grad=True)
    b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None
    return LinearWeights(w, b)


def init_norm(c: int, dtype=np.float32) -> NormWeights:
    return NormWeights(
        Tensor(np.ones(c, dtype=dtype), requires_grad=True),
        Tensor(np.zeros(c, dtype=dtype), requires_grad=True),
    )


def linear(x: Tensor, w: LinearWeights) -> Tensor:
    if x.shape[-1] != w.in_features:
        raise DimensionError(
            f"linear: input channels {x.shape[-1]} != weight rows {w.in_features}"
        )
    y = ops.matmul(x, w.weight) if x.ndim >= 2 else ops.matmul(ops.reshape(x, (1, -1)), w.weight)
    if x.ndim < 2:
        y = ops.reshape(y, (w.out_features,))
    return y if w.bias is None else y + w.bias


def mlp2(x: Tensor, w1: LinearWeights, w2: LinearWeights) -> Tensor:
    """linear -> GELU -> linear."""
    if w1.out_features != w2.in_features:
        raise DimensionError(
            f"mlp2: hidden widths disagree ({w1.out_features} vs {w2.in_features})"
        )
    return linear(ops.gelu(linear(x, w1)), w2)


def layer_norm(x: Tensor, norm: NormWeights, eps: float = LN_EPS) -> Tensor:
    return ops.layer_norm(x, norm.gamma, norm.beta, eps)


def softmax_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"softmax_rows expects rank 2, got shape {x.shape}")
    if not np.isfinite(x.data).all():
        raise NumericError("softmax_rows: non-finite input")
    return ops.softmax(x, axis=-1)


# ---------------------------------------------------------------- convolution

def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None) -> Tensor:
    """Same-padded 2D cross-correlation applied to each frame.

    ``x`` is ``[T, H, W, Cin]`` and ``kernel`` is ``[kh, kw, Cin, Cout]``.
    """
    kh, kw, cin, cout = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"conv2d needs odd kernel sizes, got {kh}x{kw}")
    if x.ndim != 4 or x.shape[-1] != cin:
        raise DimensionError(f"conv2d: input {x.shape} vs kernel {kernel.shape}")
    if x.dtype != kernel.dtype:
        raise ContractError("conv2d: mixed dtypes")
    t, h, w, _ = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    # [T, H, W, Cin, kh, kw] -> [T*H*W, kh*kw*Cin]
    cols = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = np.ascontiguousarray(cols.transpose(0, 1, 2, 4, 5, 3)).reshape(t * h * w, -1)
    kmat = kernel.data.reshape(kh * kw * cin, cout)
    out = (cols @ kmat).reshape(t, h, w, cout)

    def back(g):
        g2 = g.reshape(t * h * w, cout)
        gk = (cols.T @ g2).reshape(kernel.shape)
        gcols = (g2 @ kmat.T).reshape(t, h, w, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + h, j:j + w, :] += gcols[:, :, :, i, j, :]
        return gxp[:, ph:ph + h, pw:pw + w, :], gk

    y = record("conv2d", out, (x, kernel), back)
    return y if bias is None else y + bias


# ------------------------------------------------------------------- resizing

def bilinear_matrix(n_in: int, n_out: int, dtype=np.float64) -> np.ndarray:
    """1D align-corners-false interpolation matrix of shape ``[n_out, n_in]``."""
    scale = n_in / n_out
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    src = np.clip(src, 0.0, None)
    i0 = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = src - i0
    mat = np.zeros((n_out, n_in), dtype=np.float64)
    rows = np.arange(n_out)
    np.add.at(mat, (rows, i0), 1.0 - frac)
    np.add.at(mat, (rows, i1), frac)
    return mat.astype(dtype)


def resize_bilinear(x: Tensor, scale: float) -> Tensor:
    """Bilinearly resize each frame of ``[T, H, W, C]`` by ``scale``."""
    if scale < 1:
        raise ContractError(f"resize_bilinear needs scale >= 1, got {scale}")
    t, h, w, c = x.shape
    oh, ow = h * scale, w * scale
    if oh != int(oh) or ow != int(ow):
        raise ContractError(f"resize_bilinear: {h}x{w} * {scale} is not integral")
    oh, ow = int(oh), int(ow)
    if (oh, ow) == (h, w):
        return x
    ah = bilinear_matrix(h, oh, x.dtype)
    aw = bilinear_matrix(w, ow, x.dtype)
    rows = np.einsum("ih,thwc->tiwc", ah, x.data)
    out = np.einsum("jw,tiwc->tijc", aw, rows)

    def back(g):
        gr = np.einsum("jw,tijc->tiwc", aw, g)
        return (np.einsum("ih,tiwc->thwc", ah, gr),)

    return record("resize_bilinear", out, (x,), back)
