"""Temporal mutual self attention over clip/window partitions of a video.

A video feature ``[T, H, W, C]`` is cut into groups of ``temporal x M x M``
tokens (frame-major inside each group).  Odd layers roll the sequence by one
frame and the frames by ``M // 2`` pixels before cutting, so neighbouring
groups exchange information from layer to layer.  Tokens that only became
neighbours through the cyclic roll are masked apart:

* frames ``T-1`` and ``0`` share the first clip of a shifted layer but never
  attend to each other; in the mutual path each of them attends to itself;
* spatially wrapped rows/columns attend only within their own strip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import (
    AttentionConfig,
    ProjectionSet,
    additive_mask,
    init_projections,
    multi_head_mutual_attention,
    multi_head_self_attention,
)
from .errors import ConfigError, ContractError, DimensionError
from .tensor import (
    LinearWeights,
    NormWeights,
    Tensor,
    init_linear,
    init_norm,
    layer_norm,
    linear,
    mlp2,
    ops,
    trunc_normal,
)


@dataclass(frozen=True)
class WindowSpec:
    temporal: int = 2
    spatial: int = 8
    temporal_shift: int = 0
    spatial_shift: int = 0

    def __post_init__(self):
        if self.temporal < 1 or self.spatial < 1:
            raise ConfigError(f"window sizes must be >= 1, got {self}")
        if not 0 <= self.temporal_shift < self.temporal:
            raise ConfigError(f"temporal shift {self.temporal_shift} outside [0, {self.temporal})")
        if not 0 <= self.spatial_shift < self.spatial:
            raise ConfigError(f"spatial shift {self.spatial_shift} outside [0, {self.spatial})")

    @property
    def tokens(self) -> int:
        return self.temporal * self.spatial * self.spatial


def layer_spec(i: int, spatial: int, temporal: int = 2) -> WindowSpec:
    """Window spec of layer ``i`` (0-based); odd layers shift in time and space."""
    odd = i % 2 == 1
    return WindowSpec(
        temporal=temporal,
        spatial=spatial,
        temporal_shift=1 if odd and temporal > 1 else 0,
        spatial_shift=spatial // 2 if odd else 0,
    )


def receptive_field(i: int) -> int:
    """Frames a token can draw on at layer ``i`` of a 2-frame shifted stack."""
    return 2 * (i - 1) if i >= 2 else 2


@dataclass(frozen=True)
class GroupMasks:
    """Per-group attention constraints derived from a partition."""

    self_mask: np.ndarray | None  # additive [G, n, n]
    mutual_mask: np.ndarray | None  # additive [G, n/2, n/2]
    wrapped: np.ndarray | None  # bool [G]; clip spans the temporal wrap
    rel_index: np.ndarray = field(repr=False, default=None)  # int [n, n]


@dataclass(frozen=True, eq=False)
class PartitionIndex:
    """Bookkeeping needed to undo :func:`partition` exactly."""

    spec: WindowSpec
    input_shape: tuple[int, int, int, int]
    padded_shape: tuple[int, int, int]
    shifts: tuple[int, int, int]  # effective (t, y, x) roll amounts
    coords: np.ndarray = field(repr=False)  # [G, n, 3] padded-grid (t, y, x)
    labels: np.ndarray = field(repr=False)  # [G, n] wrap-region labels
    time_labels: np.ndarray = field(repr=False)  # [G, n]

    @property
    def groups(self) -> int:
        return self.coords.shape[0]

    @property
    def tokens(self) -> int:
        return self.coords.shape[1]

    def locate(self, t: int, y: int, x: int) -> tuple[int, int]:
        """(group, position) of the padded-grid token at ``(t, y, x)``."""
        hit = np.argwhere((self.coords == (t, y, x)).all(axis=-1))
        if len(hit) != 1:
            raise ContractError(f"token {(t, y, x)} not in partition")
        return int(hit[0, 0]), int(hit[0, 1])

    def masks(self, dtype=np.float32) -> GroupMasks:
        shifted = any(self.shifts)
        self_mask = mutual_mask = wrapped = None
        if shifted:
            lab = self.labels
            self_mask = additive_mask(lab[:, :, None] == lab[:, None, :], dtype)
            if self.spec.temporal == 2:
                n = self.tokens // 2
                space = lab[:, :n] % 4
                mutual_mask = additive_mask(space[:, :, None] == space[:, None, :], dtype)
                wrapped = self.time_labels[:, 0] != self.time_labels[:, n]
        return GroupMasks(self_mask, mutual_mask, wrapped, _relative_index(self.spec))


_REL_T = 8  # temporal extent of the relative-bias table


def _relative_index(spec: WindowSpec) -> np.ndarray:
    m, tw = spec.spatial, spec.temporal
    t, y, x = np.meshgrid(np.arange(tw), np.arange(m), np.arange(m), indexing="ij")
    pos = np.stack([t.ravel(), y.ravel(), x.ravel()], axis=1)
    rel = pos[:, None, :] - pos[None, :, :]
    rel_t = np.clip(rel[..., 0], -(_REL_T - 1), _REL_T - 1) + _REL_T - 1
    span = 2 * m - 1
    return (rel_t * span + rel[..., 1] + m - 1) * span + rel[..., 2] + m - 1


def relative_table_size(spatial: int) -> int:
    return (2 * _REL_T - 1) * (2 * spatial - 1) ** 2


def _ceil_to(n: int, k: int) -> int:
    return -(-n // k) * k


def _group_layout(arr: np.ndarray, tw: int, m: int) -> np.ndarray:
    tp, hp, wp = arr.shape[:3]
    rest = arr.shape[3:]
    arr = arr.reshape(tp // tw, tw, hp // m, m, wp // m, m, *rest)
    arr = arr.transpose(0, 2, 4, 1, 3, 5, *range(6, 6 + len(rest)))
    return arr.reshape(-1, tw * m * m, *rest)


def partition(x: Tensor, spec: WindowSpec) -> tuple[Tensor, PartitionIndex]:
    """Group ``[T, H, W, C]`` tokens into ``[G, temporal*M*M, C]`` windows.

    Axes are reflect-padded to multiples of the window sizes first.  Rolls
    are applied only along axes holding more than one window.
    """
    if x.ndim != 4:
        raise DimensionError(f"partition expects [T, H, W, C], got {x.shape}")
    t, h, w, c = x.shape
    tw, m = spec.temporal, spec.spatial
    tp, hp, wp = _ceil_to(t, tw), _ceil_to(h, m), _ceil_to(w, m)
    st = spec.temporal_shift if tp > tw else 0
    sy = spec.spatial_shift if hp > m else 0
    sx = spec.spatial_shift if wp > m else 0

    padded = ops.pad_reflect(x, {0: (0, tp - t), 1: (0, hp - h), 2: (0, wp - w)})
    rolled = ops.roll(padded, (st, -sy, -sx), (0, 1, 2))
    tokens = tw * m * m
    a = ops.reshape(rolled, (tp // tw, tw, hp // m, m, wp // m, m, c))
    a = ops.permute(a, (0, 2, 4, 1, 3, 5, 6))
    groups = ops.reshape(a, (-1, tokens, c))

    grid = np.stack(np.meshgrid(np.arange(tp), np.arange(hp), np.arange(wp), indexing="ij"), -1)
    grid = np.roll(grid, (st, -sy, -sx), (0, 1, 2))
    coords = _group_layout(grid, tw, m)
    time_lab = (coords[..., 0] >= tp - st).astype(np.int64)
    labels = time_lab * 4 + (coords[..., 1] < sy) * 2 + (coords[..., 2] < sx)

    index = PartitionIndex(
        spec=spec,
        input_shape=(t, h, w, c),
        padded_shape=(tp, hp, wp),
        shifts=(st, sy, sx),
        coords=coords,
        labels=labels,
        time_labels=time_lab,
    )
    return groups, index


def unpartition(groups: Tensor, index: PartitionIndex) -> Tensor:
    """Exact inverse of :func:`partition` (including the crop of any padding)."""
    t, h, w, c = index.input_shape
    tp, hp, wp = index.padded_shape
    tw, m = index.spec.temporal, index.spec.spatial
    if groups.shape != (index.groups, index.tokens, c):
        raise ContractError(
            f"groups {groups.shape} do not match partition index "
            f"({index.groups}, {index.tokens}, {c})"
        )
    a = ops.reshape(groups, (tp // tw, hp // m, wp // m, tw, m, m, c))
    a = ops.permute(a, (0, 3, 1, 4, 2, 5, 6))
    a = ops.reshape(a, (tp, hp, wp, c))
    st, sy, sx = index.shifts
    a = ops.roll(a, (-st, sy, sx), (0, 1, 2))
    if (tp, hp, wp) != (t, h, w):
        a = ops.getitem(a, (slice(0, t), slice(0, h), slice(0, w)))
    return a


# ------------------------------------------------------------------- weights

@dataclass(frozen=True)
class TmsaBlockWeights:
    ln1: NormWeights
    mutual: ProjectionSet
    self_attn: ProjectionSet
    fuse: LinearWeights  # 2C -> C
    ln2: NormWeights
    ffn1: LinearWeights  # C -> rC
    ffn2: LinearWeights  # rC -> C
    rel_bias: Tensor | None = None  # [table, heads]

    def __post_init__(self):
        c = self.mutual.channels
        if self.self_attn.channels != c:
            raise DimensionError("mutual and self projections disagree on channels")
        if (self.fuse.in_features, self.fuse.out_features) != (2 * c, c):
            raise DimensionError(f"fuse must be {2 * c}->{c}")
        if self.ffn1.in_features != c or self.ffn2.out_features != c:
            raise DimensionError("ffn must map C -> rC -> C")


@dataclass(frozen=True)
class SelfBlockWeights:
    ln1: NormWeights
    self_attn: ProjectionSet
    ln2: NormWeights
    ffn1: LinearWeights
    ffn2: LinearWeights
    rel_bias: Tensor | None = None


def _rel_bias_param(rng, cfg: AttentionConfig, spatial: int, dtype):
    if not cfg.use_relative_bias:
        return None
    table = trunc_normal(rng, (relative_table_size(spatial), cfg.heads), dtype=dtype)
    return Tensor(table, requires_grad=True)


def init_tmsa_block(rng, cfg: AttentionConfig, spatial: int, mlp_ratio: float = 2.0,
                    dtype=np.float32) -> TmsaBlockWeights:
    c = cfg.channels
    hidden = max(1, int(round(c * mlp_ratio)))
    return TmsaBlockWeights(
        ln1=init_norm(c, dtype),
        mutual=init_projections(rng, c, dtype),
        self_attn=init_projections(rng, c, dtype),
        fuse=init_linear(rng, 2 * c, c, dtype),
        ln2=init_norm(c, dtype),
        ffn1=init_linear(rng, c, hidden, dtype),
        ffn2=init_linear(rng, hidden, c, dtype),
        rel_bias=_rel_bias_param(rng, cfg, spatial, dtype),
    )


def init_self_block(rng, cfg: AttentionConfig, spatial: int, mlp_ratio: float = 2.0,
                    dtype=np.float32) -> SelfBlockWeights:
    c = cfg.channels
    hidden = max(1, int(round(c * mlp_ratio)))
    return SelfBlockWeights(
        ln1=init_norm(c, dtype),
        self_attn=init_projections(rng, c, dtype),
        ln2=init_norm(c, dtype),
        ffn1=init_linear(rng, c, hidden, dtype),
        ffn2=init_linear(rng, hidden, c, dtype),
        rel_bias=_rel_bias_param(rng, cfg, spatial, dtype),
    )


# -------------------------------------------------------------------- blocks

def _bias(table: Tensor | None, masks: GroupMasks | None, n: int, heads: int):
    if table is None or masks is None or masks.rel_index is None:
        return None
    idx = masks.rel_index[:n, :n]
    b = ops.take(table, idx.reshape(-1), axis=0)
    return ops.permute(ops.reshape(b, (n, n, heads)), (2, 0, 1))


def tmsa_block(x: Tensor, w: TmsaBlockWeights, cfg: AttentionConfig,
               masks: GroupMasks | None = None) -> Tensor:
    """One two-frame TMSA block on groups ``[G, 2N, C]`` (frame-major tokens)."""
    g, n, c = x.shape
    if n % 2:
        raise ContractError(f"tmsa_block needs two equal frame halves, got {n} tokens")
    half = n // 2
    self_mask = mutual_mask = wrapped = None
    if masks is not None:
        self_mask, mutual_mask, wrapped = masks.self_mask, masks.mutual_mask, masks.wrapped

    xn = layer_norm(x, w.ln1)
    x1, x2 = ops.split(xn, 2, axis=1)
    src1, src2 = x2, x1
    if wrapped is not None and wrapped.any():
        sel = wrapped[:, None, None]
        src1, src2 = ops.where(sel, x1, x2), ops.where(sel, x2, x1)
    bias_m = _bias(w.rel_bias, masks, half, cfg.heads)
    y1 = multi_head_mutual_attention(x1, src1, w.mutual, cfg, mutual_mask, bias_m)
    y2 = multi_head_mutual_attention(x2, src2, w.mutual, cfg, mutual_mask, bias_m)
    y3 = multi_head_self_attention(
        xn, w.self_attn, cfg, self_mask, _bias(w.rel_bias, masks, n, cfg.heads)
    )
    fused = ops.concat([ops.concat([y1, y2], axis=1), y3], axis=-1)
    x = x + linear(fused, w.fuse)
    return x + mlp2(layer_norm(x, w.ln2), w.ffn1, w.ffn2)


def self_only_block(x: Tensor, w: SelfBlockWeights, cfg: AttentionConfig,
                    masks: GroupMasks | None = None) -> Tensor:
    """Pre-norm self attention block over every token of each group."""
    n = x.shape[1]
    self_mask = masks.self_mask if masks is not None else None
    attn = multi_head_self_attention(
        layer_norm(x, w.ln1), w.self_attn, cfg, self_mask,
        _bias(w.rel_bias, masks, n, cfg.heads),
    )
    x = x + attn
    return x + mlp2(layer_norm(x, w.ln2), w.ffn1, w.ffn2)


def apply_layer(x: Tensor, spec: WindowSpec, weights, cfg: AttentionConfig) -> Tensor:
    """Partition, run the matching block, and reassemble one layer."""
    groups, index = partition(x, spec)
    masks = index.masks(x.dtype)
    if isinstance(weights, TmsaBlockWeights):
        if spec.temporal != 2:
            raise ContractError("mutual blocks are defined for 2-frame windows only")
        out = tmsa_block(groups, weights, cfg, masks)
    else:
        out = self_only_block(groups, weights, cfg, masks)
    return unpartition(out, index)


def tmsa_stack(x: Tensor, layers, cfg: AttentionConfig) -> Tensor:
    """Apply ``[(WindowSpec, weights), ...]`` in order."""
    for spec, weights in layers:
        x = apply_layer(x, spec, weights, cfg)
    return x
