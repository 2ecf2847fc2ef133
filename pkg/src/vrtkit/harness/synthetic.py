"""Deterministic synthetic video clips for smoke tests and demos."""

from __future__ import annotations

import numpy as np


def smooth_pattern(h: int, w: int, channels: int = 3, seed: int = 0,
                   offset: tuple[float, float] = (0.0, 0.0), waves: int = 4) -> np.ndarray:
    """Sum of a few random plane waves, evaluated at pixel centres shifted by ``offset``.

    Values lie in ``[0.1, 0.9]``.
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64),
                         indexing="ij")
    xx = xx - offset[0]
    yy = yy - offset[1]
    out = np.zeros((h, w, channels))
    for c in range(channels):
        acc = np.zeros((h, w))
        for _ in range(waves):
            freq = rng.uniform(0.05, 0.25)
            theta = rng.uniform(0, np.pi)
            phase = rng.uniform(0, 2 * np.pi)
            acc += np.cos(2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase)
        out[..., c] = acc / waves
    return 0.5 + 0.4 * out


def translating_clip(frames: int, h: int, w: int, shift=(1.0, 0.0), channels: int = 3,
                     seed: int = 0) -> np.ndarray:
    """``[T, H, W, C]`` clip whose content moves by ``shift`` pixels per frame."""
    return np.stack([
        smooth_pattern(h, w, channels, seed, (t * shift[0], t * shift[1]))
        for t in range(frames)
    ]).astype(np.float32)
