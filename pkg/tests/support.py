"""Shared builders for module and acceptance tests."""

from __future__ import annotations

import numpy as np

from vrtkit.attention import AttentionConfig
from vrtkit.pipeline import named_parameters, replace_parameters
from vrtkit.tensor import Tape, Tensor
from vrtkit.tmsa import init_tmsa_block, layer_spec, tmsa_stack


def rescale_weights(obj, rng, std):
    """Redraw every tensor in ``obj`` from N(0, std^2) (LayerNorm gains stay near 1)."""
    values = {}
    for name, t in named_parameters(obj):
        draw = rng.normal(0.0, std, size=t.shape)
        if name.endswith("gamma"):
            draw = 1.0 + draw
        values[name] = Tensor(draw.astype(t.dtype), requires_grad=True)
    return replace_parameters(obj, values)


def shifted_stack(layers: int, cfg: AttentionConfig, spatial: int, seed: int = 0, std: float = 0.5):
    """An alternating unshifted/shifted stack of 2-frame TMSA layers in float64."""
    rng = np.random.default_rng(seed)
    stack = [
        (layer_spec(i, spatial), init_tmsa_block(rng, cfg, spatial, 2.0, np.float64))
        for i in range(layers)
    ]
    return rescale_weights(stack, rng, std)


def influence_forward(stack, cfg, x: np.ndarray, threshold: float = 1e-12) -> np.ndarray:
    """``inf[t, j]``: does perturbing input frame ``j`` move output frame ``t``?"""
    t = x.shape[0]
    base = tmsa_stack(Tensor(x), stack, cfg).data
    delta = np.random.default_rng(99).normal(size=x.shape[1:])
    inf = np.zeros((t, t), bool)
    for j in range(t):
        xp = x.copy()
        xp[j] += delta
        diff = np.abs(tmsa_stack(Tensor(xp), stack, cfg).data - base).max(axis=(1, 2, 3))
        inf[:, j] = diff > threshold
    return inf


def influence_backward(stack, cfg, x: np.ndarray) -> np.ndarray:
    """Same relation read off the tape: nonzero gradient blocks."""
    t = x.shape[0]
    inf = np.zeros((t, t), bool)
    for out_frame in range(t):
        leaf = Tensor(x, requires_grad=True)
        with Tape() as tape:
            y = tmsa_stack(leaf, stack, cfg)
        seed = np.zeros(y.shape)
        seed[out_frame] = 1.0
        g = tape.backward(y, seed=seed)[leaf]
        inf[out_frame] = np.abs(g).max(axis=(1, 2, 3)) > 0
    return inf


def distance_law(t: int, reach: int) -> np.ndarray:
    """``law[t, j] = |t - j| <= reach``."""
    idx = np.arange(t)
    return np.abs(idx[:, None] - idx[None, :]) <= reach
