"""Scaled dot-product attention, multi-head mutual and self attention.

Mutual attention takes its queries from a reference token set and its keys
and values from a supporting set; self attention is the special case where
both sets coincide.  Heads are laid out head-major along the channel axis:
channels ``[k*D, (k+1)*D)`` belong to head ``k``.

Masks are additive ``[..., N, M]`` arrays holding ``0`` for allowed pairs and
the most negative finite value of the dtype for blocked pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, DimensionError
from .tensor import LinearWeights, Tensor, init_linear, linear, ops


@dataclass(frozen=True)
class AttentionConfig:
    channels: int
    heads: int
    use_relative_bias: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"heads={self.heads} must divide channels={self.channels}")

    @property
    def head_dim(self) -> int:
        return self.channels // self.heads

    @property
    def scale(self) -> float:
        return 1.0 / math.sqrt(self.head_dim)


@dataclass(frozen=True)
class ProjectionSet:
    q: LinearWeights
    k: LinearWeights
    v: LinearWeights
    out: LinearWeights

    def __post_init__(self):
        c = self.q.in_features
        for name in ("q", "k", "v", "out"):
            w = getattr(self, name)
            if (w.in_features, w.out_features) != (c, c):
                raise DimensionError(
                    f"projection {name} is {w.in_features}->{w.out_features}, expected {c}->{c}"
                )

    @property
    def channels(self) -> int:
        return self.q.in_features


def init_projections(rng, channels: int, dtype=np.float32) -> ProjectionSet:
    return ProjectionSet(*(init_linear(rng, channels, channels, dtype) for _ in range(4)))


def mask_value(dtype) -> float:
    """The finite stand-in for minus infinity."""
    return float(-np.finfo(dtype).max)


def additive_mask(allowed: np.ndarray, dtype) -> np.ndarray:
    """Convert a boolean ``allowed`` array into an additive attention mask."""
    allowed = np.asarray(allowed, dtype=bool)
    return np.where(allowed, 0.0, mask_value(dtype)).astype(dtype)


def _check_mask_rows(mask: np.ndarray) -> None:
    blocked = mask <= 0.5 * mask_value(mask.dtype)
    if np.any(blocked.all(axis=-1)):
        raise ContractError("attention mask leaves a query row with no admissible key")


def qkv_project(xq: Tensor, xkv: Tensor, p: ProjectionSet) -> tuple[Tensor, Tensor, Tensor]:
    """Queries from ``xq``, keys and values from ``xkv``."""
    c = p.channels
    if xq.shape[-1] != c or xkv.shape[-1] != c:
        raise DimensionError(
            f"qkv_project: channels {xq.shape[-1]}/{xkv.shape[-1]} vs projections {c}"
        )
    return linear(xq, p.q), linear(xkv, p.k), linear(xkv, p.v)


def attention_weights(
    q: Tensor, k: Tensor, mask: np.ndarray | None = None, bias: Tensor | None = None
) -> Tensor:
    """Row-softmax of ``q k^T / sqrt(D)`` (plus ``bias``) with ``mask`` applied."""
    if q.shape[-1] != k.shape[-1]:
        raise DimensionError(f"attention: query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    logits = ops.matmul(q, ops.permute(k, _swap_last(k.ndim))) * (1.0 / math.sqrt(q.shape[-1]))
    if bias is not None:
        logits = logits + bias
    if mask is not None:
        mask = np.asarray(mask, dtype=q.dtype)
        try:
            np.broadcast_shapes(mask.shape, logits.shape)
        except ValueError:
            raise DimensionError(f"mask {mask.shape} vs logits {logits.shape}") from None
        _check_mask_rows(mask)
        logits = logits + Tensor._wrap(mask, "mask")
    return ops.softmax(logits, axis=-1)


def _swap_last(ndim: int) -> tuple[int, ...]:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def scaled_attention(
    q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None, bias: Tensor | None = None
) -> Tensor:
    """``softmax(q k^T / sqrt(D) + mask) v`` over the last two axes."""
    if k.shape[-2] != v.shape[-2]:
        raise DimensionError(f"attention: {k.shape[-2]} keys but {v.shape[-2]} values")
    return ops.matmul(attention_weights(q, k, mask, bias), v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, c = x.shape
    x = ops.reshape(x, (*lead, n, heads, c // heads))
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return ops.permute(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    axes = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return ops.reshape(ops.permute(x, axes), (*lead, n, h * d))


def _head_mask(mask):
    # [..., N, M] -> [..., 1, N, M] so it broadcasts over heads.
    if mask is None:
        return None
    mask = np.asarray(mask)
    return mask[..., None, :, :]


def multi_head_mutual_attention(
    xr: Tensor,
    xs: Tensor,
    p: ProjectionSet,
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
    bias: Tensor | None = None,
) -> Tensor:
    """Tokens of ``xr`` ([..., N, C]) attend to tokens of ``xs`` ([..., M, C]).

    ``bias``, when given, is a per-head additive logit term ``[..., h, N, M]``.
    """
    if p.channels != cfg.channels:
        raise DimensionError(f"projections have {p.channels} channels, config {cfg.channels}")
    q, k, v = qkv_project(xr, xs, p)
    heads = scaled_attention(
        _split_heads(q, cfg.heads), _split_heads(k, cfg.heads), _split_heads(v, cfg.heads),
        _head_mask(mask), bias,
    )
    return linear(_merge_heads(heads), p.out)


def multi_head_self_attention(
    x: Tensor,
    p: ProjectionSet,
    cfg: AttentionConfig,
    mask: np.ndarray | None = None,
    bias: Tensor | None = None,
) -> Tensor:
    return multi_head_mutual_attention(x, x, p, cfg, mask, bias)
