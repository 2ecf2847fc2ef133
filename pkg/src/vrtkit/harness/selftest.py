"""Fast in-process invariant checks used by ``vrtkit selftest``."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from ..attention import AttentionConfig, init_projections, multi_head_mutual_attention, scaled_attention
from ..pipeline import (
    MICRO,
    ModelConfig,
    charbonnier_loss,
    forward,
    init_model,
    pixel_shuffle,
    pixel_unshuffle,
    zero_model,
)
from ..tensor import Tensor, grad_check, matmul, ntf, ops, resize_bilinear, softmax_rows
from ..tmsa import WindowSpec, init_tmsa_block, partition, tmsa_block, unpartition
from ..warp import flow_warp
from .metrics import PSNR_CAP, psnr, ssim


def _softmax_rows_sum():
    x = np.random.default_rng(0).uniform(-50, 50, size=(64, 17)).astype(np.float32)
    s = softmax_rows(Tensor(x)).data.sum(axis=1)
    assert np.abs(s - 1).max() < 1e-6, f"row sums off by {np.abs(s - 1).max():.2e}"


def _matmul_oracle():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    ref = np.array([[sum(a[i, k] * b[k, j] for k in range(5)) for j in range(3)] for i in range(4)])
    assert np.abs(matmul(Tensor(a), Tensor(b)).data - ref).max() < 1e-12


def _attention_oracle():
    rng = np.random.default_rng(2)
    q, k, v = rng.normal(size=(6, 4)), rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
    out = scaled_attention(Tensor(q), Tensor(k), Tensor(v)).data
    for i in range(6):
        logits = np.array([q[i] @ k[j] / 2.0 for j in range(6)])
        w = np.exp(logits - logits.max())
        w /= w.sum()
        assert np.abs(out[i] - (w[:, None] * v).sum(0)).max() < 1e-12


def _warping_limit():
    rng = np.random.default_rng(3)
    cfg = AttentionConfig(4, 1)
    p = init_projections(rng, 4, np.float64)
    eye = Tensor(np.eye(4))
    p = type(p)(*(type(w)(eye, Tensor(np.zeros(4))) for w in (p.q, p.k, p.v, p.out)))
    xs = -np.ones((5, 4)) * 20
    xs[2] = 20
    xr = np.full((1, 4), 20.0)
    out = multi_head_mutual_attention(Tensor(xr), Tensor(xs), p, cfg).data
    assert np.abs(out[0] - xs[2]).max() < 1e-6


def _partition_roundtrip():
    x = Tensor(np.random.default_rng(4).normal(size=(5, 10, 9, 3)))
    for st in (0, 1):
        for ss in (0, 2):
            g, idx = partition(x, WindowSpec(2, 4, st, ss))
            assert np.array_equal(unpartition(g, idx).data, x.data)


def _pixel_shuffle_roundtrip():
    x = Tensor(np.random.default_rng(5).normal(size=(2, 3, 4, 8)))
    assert np.array_equal(pixel_unshuffle(pixel_shuffle(x, 2), 2).data, x.data)


def _zero_flow_identity():
    x = Tensor(np.random.default_rng(6).normal(size=(7, 6, 3)))
    assert np.array_equal(flow_warp(x, np.zeros((7, 6, 2))).data, x.data)


def _residual_identity():
    cfg = ModelConfig(scales=2, depth=1, channels=8, heads=2, window=4, refinement_depth=1, scale=2)
    model = zero_model(init_model(cfg))
    lq = Tensor(np.random.default_rng(7).uniform(size=(2, 8, 8, 3)).astype(np.float32))
    assert np.array_equal(forward(model, lq).data, resize_bilinear(lq, 2).data)


def _block_gradient():
    rng = np.random.default_rng(8)
    cfg = AttentionConfig(4, 2)
    w = init_tmsa_block(rng, cfg, 2, 2.0, np.float64)
    v = rng.normal(size=(1, 8, 4))
    err = grad_check(lambda x: ops.sum(tmsa_block(x, w, cfg) * Tensor(v)), Tensor(rng.normal(size=(1, 8, 4))))
    assert err < 1e-4, f"relative error {err:.2e}"


def _micro_model_finite():
    model = init_model(ModelConfig(**MICRO))
    lq = Tensor(np.random.default_rng(9).uniform(size=(2, 8, 8, 3)))
    out = forward(model, lq)
    assert out.shape == (2, 16, 16, 3) and np.isfinite(out.data).all()


def _metrics_identity():
    a = np.random.default_rng(10).uniform(size=(2, 16, 16, 3))
    assert psnr(a, a)[1] == PSNR_CAP
    assert ssim(a, a)[1] == 1.0
    loss = charbonnier_loss(Tensor(a), Tensor(a)).item()
    assert abs(loss - 1e-3) < 1e-15


def _ntf_roundtrip():
    a = np.random.default_rng(11).normal(size=(2, 3, 4)).astype(np.float32)
    assert ntf.loads(ntf.dumps(a)).tobytes() == a.tobytes()


CHECKS: list[tuple[str, Callable[[], None]]] = [
    ("softmax rows sum to one", _softmax_rows_sum),
    ("matmul matches loop oracle", _matmul_oracle),
    ("attention matches per-row oracle", _attention_oracle),
    ("one-hot attention equals warping", _warping_limit),
    ("partition round trip", _partition_roundtrip),
    ("pixel shuffle round trip", _pixel_shuffle_roundtrip),
    ("zero flow is identity", _zero_flow_identity),
    ("zero weights give upsampled input", _residual_identity),
    ("TMSA block gradient", _block_gradient),
    ("micro model forward", _micro_model_finite),
    ("metric identities", _metrics_identity),
    ("NTF round trip", _ntf_roundtrip),
]


def run_selftest(emit=print) -> bool:
    ok = True
    for name, check in CHECKS:
        start = time.perf_counter()
        try:
            check()
        except Exception as exc:  # report every failure, keep going
            ok = False
            emit(f"FAIL  {name}: {type(exc).__name__}: {exc}")
        else:
            emit(f"PASS  {name} ({(time.perf_counter() - start) * 1e3:.0f} ms)")
    return ok
