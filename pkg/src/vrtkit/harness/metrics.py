"""PSNR and SSIM on RGB frames in ``[0, peak]``."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError

PSNR_CAP = 100.0


def _pair(a, b):
    a = np.asarray(getattr(a, "data", a), dtype=np.float64)
    b = np.asarray(getattr(b, "data", b), dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"metric inputs differ in shape: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a[None], b[None]
    if a.ndim != 4:
        raise DimensionError(f"expected [T, H, W, C] frames, got {a.shape}")
    return a, b


def psnr(a, b, peak: float = 1.0) -> tuple[np.ndarray, float]:
    """Per-frame PSNR in dB and their mean; zero error maps to ``PSNR_CAP``."""
    a, b = _pair(a, b)
    mse = ((a - b) ** 2).mean(axis=(1, 2, 3))
    with np.errstate(divide="ignore"):
        vals = np.where(mse == 0, PSNR_CAP, 10.0 * np.log10(peak * peak / np.where(mse == 0, 1, mse)))
    vals = np.minimum(vals, PSNR_CAP)
    return vals, float(vals.mean())


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    # Separable 'valid' correlation over axes 1 and 2 of [T, H, W, C].
    k = len(g)
    rows = sliding_window_view(x, k, axis=1) @ g
    return sliding_window_view(rows, k, axis=2) @ g


def ssim(a, b, window: int = 11, k1: float = 0.01, k2: float = 0.03,
         peak: float = 1.0, sigma: float = 1.5) -> tuple[np.ndarray, float]:
    """Gaussian-windowed SSIM per frame (mean over valid positions and channels)."""
    a, b = _pair(a, b)
    if a.shape[1] < window or a.shape[2] < window:
        raise ContractError(f"frames {a.shape[1]}x{a.shape[2]} smaller than SSIM window {window}")
    g = gaussian_window(window, sigma)
    c1, c2 = (k1 * peak) ** 2, (k2 * peak) ** 2
    mu_a, mu_b = _filter_valid(a, g), _filter_valid(b, g)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    var_a = _filter_valid(a * a, g) - mu_aa
    var_b = _filter_valid(b * b, g) - mu_bb
    cov = _filter_valid(a * b, g) - mu_ab
    num = (2 * mu_ab + c1) * (2 * cov + c2)
    den = (mu_aa + mu_bb + c1) * (var_a + var_b + c2)
    vals = (num / den).mean(axis=(1, 2, 3))
    return vals, float(vals.mean())
