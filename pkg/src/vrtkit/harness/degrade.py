"""Synthetic degradations: bicubic downsampling, blur + downsampling, AWGN."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class DegradationSpec:
    kind: Literal["bicubic", "blur", "noise"] = "bicubic"
    scale: int = 1
    sigma: float = 1.6  # blur std in pixels
    noise_sigma: float = 0.0  # AWGN std on the [0, 1] scale
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("bicubic", "blur", "noise"):
            raise ConfigError(f"unknown degradation {self.kind!r}")
        if self.scale not in (1, 2, 4):
            raise ConfigError(f"scale must be 1, 2 or 4, got {self.scale}")
        if self.sigma < 0:
            raise ConfigError("blur sigma must be >= 0")
        if not 0 <= self.noise_sigma <= 50 / 255 + 1e-12:
            raise ConfigError("noise sigma must lie in [0, 50/255]")


def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _mirror(idx: np.ndarray, n: int) -> np.ndarray:
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx < n, idx, period - 1 - idx)


def bicubic_matrix(n_in: int, factor: int) -> np.ndarray:
    """Antialiased bicubic downsampling weights ``[n_in // factor, n_in]``.

    The kernel is stretched by ``factor``; out-of-range taps are mirrored
    back (edge sample repeated) and every row is normalised to sum 1.
    """
    n_out = n_in // factor
    width = 4 * factor
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) * factor - 0.5
        taps = np.arange(math.floor(center - width / 2), math.ceil(center + width / 2) + 1)
        wts = cubic((center - taps) / factor) / factor
        np.add.at(mat[i], _mirror(taps, n_in), wts)
    return mat / mat.sum(axis=1, keepdims=True)


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(3 * sigma)))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def blur_matrix(n: int, sigma: float) -> np.ndarray:
    """Gaussian blur as a ``[n, n]`` operator with mirrored borders."""
    if sigma == 0:
        return np.eye(n)
    k = gaussian_kernel(sigma)
    r = len(k) // 2
    mat = np.zeros((n, n))
    for i in range(n):
        np.add.at(mat[i], _mirror(np.arange(i - r, i + r + 1), n), k)
    return mat


def _apply_separable(frames: np.ndarray, mh: np.ndarray, mw: np.ndarray) -> np.ndarray:
    rows = np.einsum("ih,thwc->tiwc", mh, frames)
    return np.einsum("jw,tiwc->tijc", mw, rows)


def degrade(hq: np.ndarray, spec: DegradationSpec) -> np.ndarray:
    """Apply ``spec`` to ``[T, H, W, C]`` frames; deterministic given ``spec.seed``."""
    hq = np.asarray(hq)
    dtype = hq.dtype if hq.dtype in (np.float32, np.float64) else np.float32
    x = hq.astype(np.float64)
    _, h, w, _ = x.shape
    s = spec.scale
    if spec.kind == "bicubic" and s > 1:
        x = _apply_separable(x, bicubic_matrix(h, s), bicubic_matrix(w, s))
    elif spec.kind == "blur":
        if spec.sigma > 0:
            x = _apply_separable(x, blur_matrix(h, spec.sigma), blur_matrix(w, spec.sigma))
        x = x[:, ::s, ::s, :]
    elif spec.kind == "noise":
        if s > 1:
            x = _apply_separable(x, bicubic_matrix(h, s), bicubic_matrix(w, s))
        if spec.noise_sigma > 0:
            rng = np.random.default_rng(spec.seed)
            x = np.clip(x + rng.normal(0.0, spec.noise_sigma, size=x.shape), 0.0, 1.0)
    return np.ascontiguousarray(x, dtype=dtype)
