"""Flow-based bilinear warping and parallel warping fusion.

Flow convention: ``flow[y, x] = (dx, dy)`` in pixels, and the warped value at
``p`` is the source sampled at ``p + flow(p)``.  Samples falling outside the
source read zeros.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ContractError, DimensionError, NumericError
from .tensor import LinearWeights, Tensor, init_linear, linear, ops, record


@dataclass(frozen=True)
class FlowField:
    """Displacement field ``[H, W, 2]`` (or ``[T, H, W, 2]``) holding ``(dx, dy)``."""

    flow: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.flow)
        if f.ndim not in (3, 4) or f.shape[-1] != 2:
            raise DimensionError(f"flow must be [..., H, W, 2], got {f.shape}")
        if not np.isfinite(f).all():
            raise NumericError("flow contains non-finite values")
        h, w = f.shape[-3], f.shape[-2]
        if np.abs(f).max(initial=0.0) > max(h, w):
            raise ContractError(f"flow magnitude exceeds max(H, W) = {max(h, w)}")
        object.__setattr__(self, "flow", f)

    @property
    def spatial_shape(self) -> tuple[int, int]:
        return self.flow.shape[-3], self.flow.shape[-2]


class FlowEstimator(Protocol):
    """Estimates the flow that aligns ``sup`` to ``ref``.

    ``offset`` is the frame index of ``sup`` minus that of ``ref``.
    """

    def estimate(self, ref: np.ndarray, sup: np.ndarray, offset: int) -> FlowField: ...


class ZeroFlowEstimator:
    def estimate(self, ref, sup, offset=0) -> FlowField:
        ref = np.asarray(ref)
        return FlowField(np.zeros((*ref.shape[-3:-1], 2), dtype=ref.dtype))


class TranslationFlowEstimator:
    """Ground-truth flow for a sequence translating by ``shift`` pixels per frame.

    Frame ``t`` is assumed to show the content of frame 0 moved by
    ``t * shift``; a neighbour ``offset`` frames away is aligned by the
    constant flow ``offset * shift``.
    """

    def __init__(self, shift: tuple[float, float]):
        self.shift = (float(shift[0]), float(shift[1]))

    def estimate(self, ref, sup, offset=0) -> FlowField:
        ref = np.asarray(ref)
        h, w = ref.shape[-3:-1]
        flow = np.empty((h, w, 2), dtype=ref.dtype)
        flow[..., 0] = offset * self.shift[0]
        flow[..., 1] = offset * self.shift[1]
        return FlowField(flow)


def zero_flow_estimator() -> ZeroFlowEstimator:
    return ZeroFlowEstimator()


def synthetic_translation_estimator(known_shift: tuple[float, float]) -> TranslationFlowEstimator:
    return TranslationFlowEstimator(known_shift)


def _flow_tensor(flow, dtype) -> Tensor:
    if isinstance(flow, Tensor):
        return flow
    if isinstance(flow, FlowField):
        flow = flow.flow
    return Tensor(np.asarray(flow, dtype=dtype))


def flow_warp(x: Tensor, flow) -> Tensor:
    """Bilinearly sample ``x`` ([H,W,C] or [T,H,W,C]) at ``p + flow(p)``.

    Differentiable with respect to both ``x`` and ``flow`` (when ``flow`` is
    a Tensor).
    """
    f = _flow_tensor(flow, x.dtype)
    squeeze = x.ndim == 3
    if squeeze:
        x = ops.reshape(x, (1, *x.shape))
        f = ops.reshape(f, (1, *f.shape))
    if x.ndim != 4 or f.shape != (*x.shape[:3], 2):
        raise DimensionError(f"flow_warp: image {x.shape} vs flow {f.shape}")
    if x.dtype != f.dtype:
        raise ContractError("flow_warp: image and flow dtypes differ")
    out = _warp(x, f)
    return ops.reshape(out, out.shape[1:]) if squeeze else out


def _warp(x: Tensor, f: Tensor) -> Tensor:
    img, fl = x.data, f.data
    t, h, w, c = img.shape
    gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    sx = gx[None] + fl[..., 0]
    sy = gy[None] + fl[..., 1]
    x0 = np.floor(sx).astype(np.intp)
    y0 = np.floor(sy).astype(np.intp)
    wx = (sx - x0).astype(img.dtype)
    wy = (sy - y0).astype(img.dtype)
    tt = np.broadcast_to(np.arange(t)[:, None, None], x0.shape)

    def corner(yy, xx):
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
        vals = img[tt, yc, xc] * valid[..., None]
        return vals, valid, yc, xc

    v00, m00, y00, x00 = corner(y0, x0)
    v01, m01, y01, x01 = corner(y0, x0 + 1)
    v10, m10, y10, x10 = corner(y0 + 1, x0)
    v11, m11, y11, x11 = corner(y0 + 1, x0 + 1)
    w00 = ((1 - wx) * (1 - wy))[..., None]
    w01 = (wx * (1 - wy))[..., None]
    w10 = ((1 - wx) * wy)[..., None]
    w11 = (wx * wy)[..., None]
    out = w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11

    def back(g):
        gimg = np.zeros_like(img)
        for wgt, valid, yy, xx in (
            (w00, m00, y00, x00), (w01, m01, y01, x01),
            (w10, m10, y10, x10), (w11, m11, y11, x11),
        ):
            np.add.at(gimg, (tt, yy, xx), g * wgt * valid[..., None])
        dx = (1 - wy)[..., None] * (v01 - v00) + wy[..., None] * (v11 - v10)
        dy = (1 - wx)[..., None] * (v10 - v00) + wx[..., None] * (v11 - v01)
        gflow = np.stack([(g * dx).sum(-1), (g * dy).sum(-1)], axis=-1)
        return gimg, gflow.astype(fl.dtype)

    return record("flow_warp", out, (x, f), back)


# ---------------------------------------------------------- parallel warping

@dataclass(frozen=True)
class ParallelWarpWeights:
    fuse: LinearWeights  # 3C -> C over [x_t, warped t-1, warped t+1]

    def __post_init__(self):
        if self.fuse.in_features != 3 * self.fuse.out_features:
            raise DimensionError(
                f"parallel warp fuse must be 3C->C, got "
                f"{self.fuse.in_features}->{self.fuse.out_features}"
            )


def init_parallel_warp(rng, channels: int, dtype=np.float32) -> ParallelWarpWeights:
    return ParallelWarpWeights(init_linear(rng, 3 * channels, channels, dtype))


def neighbour_indices(t: int) -> tuple[np.ndarray, np.ndarray]:
    """Previous/next frame indices with reflection at the sequence ends."""
    idx = ops.reflect_indices(t, 1, 1)
    return idx[:-2], idx[2:]


def estimate_flows(x: np.ndarray, est: FlowEstimator, nbr: np.ndarray) -> np.ndarray:
    t, h, w, _ = x.shape
    flows = np.empty((t, h, w, 2), dtype=x.dtype)
    for i in range(t):
        field = est.estimate(x[i], x[nbr[i]], int(nbr[i]) - i)
        if not isinstance(field, FlowField):
            field = FlowField(np.asarray(field))
        if field.spatial_shape != (h, w) or field.flow.ndim != 3:
            raise DimensionError(
                f"estimator returned flow {field.flow.shape} for a {h}x{w} frame"
            )
        flows[i] = field.flow
    return flows


def parallel_warp(x: Tensor, est: FlowEstimator, w: ParallelWarpWeights) -> Tensor:
    """Warp both temporal neighbours onto each frame and fuse with a linear map."""
    if x.ndim != 4 or x.shape[0] < 1:
        raise DimensionError(f"parallel_warp expects [T, H, W, C], got {x.shape}")
    prev, nxt = neighbour_indices(x.shape[0])
    flows_prev = estimate_flows(x.data, est, prev)
    flows_next = estimate_flows(x.data, est, nxt)
    warped_prev = flow_warp(ops.take(x, prev, 0), Tensor(flows_prev))
    warped_next = flow_warp(ops.take(x, nxt, 0), Tensor(flows_next))
    return linear(ops.concat([x, warped_prev, warped_next], axis=-1), w.fuse)
