"""The full restoration network, its configuration, loss, and checkpoints.

Dataflow of :func:`forward`::

    lq -> shallow conv -> [scale 0: TMSA stack, parallel warp] -> squeeze
       -> ... -> [scale S-1] -> unsqueeze + skip -> [stack, warp] -> ...
       -> refinement stack -> head(shallow + deep) -> + upsampled lq
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Literal

import numpy as np

from .attention import AttentionConfig
from .errors import ConfigError, ContractError, DimensionError
from .tensor import (
    LinearWeights,
    Tensor,
    conv2d,
    init_linear,
    linear,
    ntf,
    ops,
    resize_bilinear,
    trunc_normal,
)
from .tmsa import (
    SelfBlockWeights,
    TmsaBlockWeights,
    apply_layer,
    init_self_block,
    init_tmsa_block,
    layer_spec,
)
from .warp import (
    FlowEstimator,
    ParallelWarpWeights,
    init_parallel_warp,
    parallel_warp,
    zero_flow_estimator,
)

Task = Literal["sr", "deblur", "denoise"]


@dataclass(frozen=True)
class ModelConfig:
    scales: int = 2
    depth: int = 4
    channels: int = 32
    heads: int = 4
    window: int = 8
    enlarged_temporal_window: int = 8
    enlarged_fraction: float = 0.25
    refinement_depth: int = 4
    mlp_ratio: float = 2.0
    task: Task = "sr"
    scale: int = 4
    in_channels: int = 3
    out_channels: int = 3
    noise_map: bool = False
    use_relative_bias: bool = False
    parallel_warp: bool = True
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        if self.heads < 1 or self.channels % self.heads:
            raise ConfigError(f"heads={self.heads} must divide channels={self.channels}")
        if self.scales < 1:
            raise ConfigError("scales must be >= 1")
        if self.depth < 1 or self.refinement_depth < 0:
            raise ConfigError("depth must be >= 1 and refinement_depth >= 0")
        if self.task not in ("sr", "deblur", "denoise"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "sr" and self.scale < 2:
            raise ConfigError("sr needs scale >= 2")
        if self.window < 1 or self.enlarged_temporal_window < 2:
            raise ConfigError("window sizes must be positive")
        if not 0.0 <= self.enlarged_fraction <= 1.0:
            raise ConfigError("enlarged_fraction must lie in [0, 1]")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.task == "sr" and self.in_channels < self.out_channels:
            raise ConfigError("residual path needs in_channels >= out_channels")

    @property
    def upscale(self) -> int:
        return self.scale if self.task == "sr" else 1

    @property
    def input_channels(self) -> int:
        """Channels the network consumes (image plus optional noise map)."""
        return self.in_channels + (1 if self.task == "denoise" and self.noise_map else 0)

    @property
    def enlarged_layers(self) -> int:
        return int(math.floor(self.depth * self.enlarged_fraction))

    @property
    def attention(self) -> AttentionConfig:
        return AttentionConfig(self.channels, self.heads, self.use_relative_bias)

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


TINY = dict(scales=2, depth=2, channels=24, heads=3, window=8, refinement_depth=2, scale=2)
MICRO = dict(scales=1, depth=1, channels=6, heads=2, window=4, refinement_depth=1, scale=2,
             dtype="float64")


@dataclass(frozen=True)
class Stage:
    blocks: list  # TmsaBlockWeights | SelfBlockWeights
    warp: ParallelWarpWeights | None


@dataclass(frozen=True)
class VrtModel:
    config: ModelConfig
    shallow_kernel: Tensor
    shallow_bias: Tensor
    stages: list[Stage]  # S descending then S-1 ascending
    down: list[LinearWeights]  # 4C -> C, S-1 entries
    up: list[LinearWeights]  # C -> 4C, S-1 entries
    refinement: list[SelfBlockWeights]
    head_kernel: Tensor
    head_bias: Tensor
    estimator: FlowEstimator = field(default_factory=zero_flow_estimator, compare=False)


def _conv_params(rng, cin, cout, dtype):
    k = Tensor(trunc_normal(rng, (3, 3, cin, cout), dtype=dtype), requires_grad=True)
    b = Tensor(np.zeros(cout, dtype=dtype), requires_grad=True)
    return k, b


def _stage(rng, cfg: ModelConfig) -> Stage:
    att, dt = cfg.attention, cfg.np_dtype
    n_big = cfg.enlarged_layers
    blocks = []
    for i in range(cfg.depth):
        if i >= cfg.depth - n_big:
            blocks.append(init_self_block(rng, att, cfg.window, cfg.mlp_ratio, dt))
        else:
            blocks.append(init_tmsa_block(rng, att, cfg.window, cfg.mlp_ratio, dt))
    warp = init_parallel_warp(rng, cfg.channels, dt) if cfg.parallel_warp else None
    return Stage(blocks, warp)


def init_model(cfg: ModelConfig, estimator: FlowEstimator | None = None) -> VrtModel:
    """Build a model with truncated-normal weights drawn from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    dt, c = cfg.np_dtype, cfg.channels
    sk, sb = _conv_params(rng, cfg.input_channels, c, dt)
    stages = [_stage(rng, cfg) for _ in range(2 * cfg.scales - 1)]
    down = [init_linear(rng, 4 * c, c, dt) for _ in range(cfg.scales - 1)]
    up = [init_linear(rng, c, 4 * c, dt) for _ in range(cfg.scales - 1)]
    refinement = [
        init_self_block(rng, cfg.attention, cfg.window, cfg.mlp_ratio, dt)
        for _ in range(cfg.refinement_depth)
    ]
    hk, hb = _conv_params(rng, c, cfg.out_channels * cfg.upscale ** 2, dt)
    return VrtModel(cfg, sk, sb, stages, down, up, refinement, hk, hb,
                    estimator or zero_flow_estimator())


# ------------------------------------------------------------ parameter trees

def named_parameters(obj, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
    """Yield ``(dotted.name, tensor)`` for every learnable tensor, in a fixed order."""
    if isinstance(obj, Tensor):
        yield prefix, obj
    elif dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        for f in dataclasses.fields(obj):
            if f.name in ("config", "estimator"):
                continue
            yield from named_parameters(getattr(obj, f.name), f"{prefix}.{f.name}" if prefix else f.name)
    elif isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            yield from named_parameters(item, f"{prefix}.{i}")


def replace_parameters(obj, values: dict[str, Tensor], prefix: str = ""):
    """Return a copy of ``obj`` with tensors swapped for ``values[name]`` where present."""
    if isinstance(obj, Tensor):
        return values.get(prefix, obj)
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        changes = {}
        for f in dataclasses.fields(obj):
            if f.name in ("config", "estimator"):
                continue
            name = f"{prefix}.{f.name}" if prefix else f.name
            changes[f.name] = replace_parameters(getattr(obj, f.name), values, name)
        return dataclasses.replace(obj, **changes)
    if isinstance(obj, (list, tuple)):
        return type(obj)(replace_parameters(v, values, f"{prefix}.{i}") for i, v in enumerate(obj))
    return obj


def parameter_count(model: VrtModel) -> int:
    return sum(t.size for _, t in named_parameters(model))


def zero_model(model: VrtModel) -> VrtModel:
    """Copy of ``model`` with every learnable weight set to zero."""
    zeros = {
        name: Tensor(np.zeros(t.shape, dtype=t.dtype), requires_grad=True)
        for name, t in named_parameters(model)
    }
    return replace_parameters(model, zeros)


# --------------------------------------------------------------- rearranging

def pixel_shuffle(x: Tensor, s: int) -> Tensor:
    """``[T, H, W, C*s*s] -> [T, sH, sW, C]``; channel ``c*s*s + i*s + j`` lands at ``(i, j)``."""
    t, h, w, cs = x.shape
    if cs % (s * s):
        raise DimensionError(f"pixel_shuffle: {cs} channels not divisible by {s * s}")
    if s == 1:
        return x
    c = cs // (s * s)
    a = ops.reshape(x, (t, h, w, c, s, s))
    a = ops.permute(a, (0, 1, 4, 2, 5, 3))
    return ops.reshape(a, (t, h * s, w * s, c))


def pixel_unshuffle(x: Tensor, s: int) -> Tensor:
    """Inverse of :func:`pixel_shuffle`."""
    t, hs, ws, c = x.shape
    if hs % s or ws % s:
        raise DimensionError(f"pixel_unshuffle: {hs}x{ws} not divisible by {s}")
    if s == 1:
        return x
    a = ops.reshape(x, (t, hs // s, s, ws // s, s, c))
    a = ops.permute(a, (0, 1, 3, 5, 2, 4))
    return ops.reshape(a, (t, hs // s, ws // s, c * s * s))


def space_to_channel(x: Tensor) -> Tensor:
    """``[T, H, W, C] -> [T, H/2, W/2, 4C]`` as blocks TL, TR, BL, BR of C channels."""
    t, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"squeeze needs even spatial dims, got {h}x{w}")
    a = ops.reshape(x, (t, h // 2, 2, w // 2, 2, c))
    a = ops.permute(a, (0, 1, 3, 2, 4, 5))
    return ops.reshape(a, (t, h // 2, w // 2, 4 * c))


def channel_to_space(x: Tensor) -> Tensor:
    t, h, w, c4 = x.shape
    if c4 % 4:
        raise DimensionError(f"unsqueeze needs a multiple of 4 channels, got {c4}")
    c = c4 // 4
    a = ops.reshape(x, (t, h, w, 2, 2, c))
    a = ops.permute(a, (0, 1, 3, 2, 4, 5))
    return ops.reshape(a, (t, 2 * h, 2 * w, c))


def downsample_squeeze(x: Tensor, reducer: LinearWeights) -> Tensor:
    c = x.shape[-1]
    if reducer.in_features != 4 * c:
        raise DimensionError(f"reducer expects {reducer.in_features} inputs, squeeze gives {4 * c}")
    return linear(space_to_channel(x), reducer)


def upsample_unsqueeze(x: Tensor, expander: LinearWeights) -> Tensor:
    if expander.in_features != x.shape[-1] or expander.out_features != 4 * x.shape[-1]:
        raise DimensionError(
            f"expander must map {x.shape[-1]}->{4 * x.shape[-1]}, "
            f"got {expander.in_features}->{expander.out_features}"
        )
    return channel_to_space(linear(x, expander))


# ----------------------------------------------------------------- forward

def shallow_extract(model: VrtModel, lq: Tensor) -> Tensor:
    return conv2d(lq, model.shallow_kernel, model.shallow_bias)


def run_stage(model: VrtModel, stage: Stage, x: Tensor) -> Tensor:
    cfg = model.config
    big = min(cfg.enlarged_temporal_window, x.shape[0])
    for i, block in enumerate(stage.blocks):
        temporal = 2 if isinstance(block, TmsaBlockWeights) else big
        x = apply_layer(x, layer_spec(i, cfg.window, temporal), block, cfg.attention)
    if stage.warp is not None:
        x = parallel_warp(x, model.estimator, stage.warp)
    return x


def _stage_error(name: str, exc: Exception) -> Exception:
    return type(exc)(f"{name}: {exc}")


def deep_features(model: VrtModel, shallow: Tensor) -> Tensor:
    cfg = model.config
    s = cfg.scales
    x = shallow
    skips = []
    for k in range(s):
        try:
            x = run_stage(model, model.stages[k], x)
        except (DimensionError, ContractError) as exc:
            raise _stage_error(f"descent stage {k}", exc) from exc
        if k < s - 1:
            skips.append(x)
            x = downsample_squeeze(x, model.down[k])
    for j, k in enumerate(range(s - 2, -1, -1)):
        try:
            x = upsample_unsqueeze(x, model.up[k]) + skips[k]
            x = run_stage(model, model.stages[s + j], x)
        except (DimensionError, ContractError) as exc:
            raise _stage_error(f"ascent stage {j}", exc) from exc
    for i, block in enumerate(model.refinement):
        try:
            x = apply_layer(x, layer_spec(i, cfg.window), block, cfg.attention)
        except (DimensionError, ContractError) as exc:
            raise _stage_error(f"refinement layer {i}", exc) from exc
    return x


def forward(model: VrtModel, lq: Tensor) -> Tensor:
    """Restore ``lq`` ``[T, H, W, C_in]`` to ``[T, sH, sW, C_out]``."""
    cfg = model.config
    if lq.ndim != 4 or lq.shape[-1] != cfg.input_channels:
        raise DimensionError(
            f"input: expected [T, H, W, {cfg.input_channels}], got {lq.shape}"
        )
    if lq.dtype != cfg.np_dtype:
        raise ContractError(f"input: dtype {lq.dtype} != model dtype {cfg.dtype}")
    t, h, w, _ = lq.shape
    mult = 2 ** (cfg.scales - 1)
    hp, wp = -(-h // mult) * mult, -(-w // mult) * mult
    padded = ops.pad_reflect(lq, {1: (0, hp - h), 2: (0, wp - w)})

    shallow = shallow_extract(model, padded)
    deep = deep_features(model, shallow)
    head = conv2d(shallow + deep, model.head_kernel, model.head_bias)
    s = cfg.upscale
    if s > 1:
        head = pixel_shuffle(head, s)
    if (hp, wp) != (h, w):
        head = ops.getitem(head, (slice(None), slice(0, s * h), slice(0, s * w)))

    image = ops.getitem(lq, (Ellipsis, slice(0, cfg.out_channels)))
    base = resize_bilinear(image, s) if s > 1 else image
    return base + head


# -------------------------------------------------------------------- loss

def charbonnier_loss(pred: Tensor, target: Tensor, eps: float = 1e-3,
                     mode: str = "per_element_mean") -> Tensor:
    """Charbonnier penalty, per element then averaged, or on the global norm."""
    if pred.shape != target.shape:
        raise DimensionError(f"loss: prediction {pred.shape} vs target {target.shape}")
    # sqrt(q + eps^2) == eps + q / (sqrt(q + eps^2) + eps): exact at q = 0 and
    # free of cancellation for tiny residuals.
    def excess(q):
        return q / (ops.sqrt(q + eps * eps) + eps)

    sq = ops.square(pred - target)
    if mode == "per_element_mean":
        return ops.mean(excess(sq)) + eps
    if mode == "global_norm":
        return excess(ops.sum(sq)) + eps
    raise ConfigError(f"unknown loss mode {mode!r}")


# -------------------------------------------------------------- checkpoints

def save_checkpoint(model: VrtModel, directory) -> None:
    """Write ``config.cfg``, ``manifest.txt`` and a flat ``weights.ntf``."""
    from .harness.config import dump_config

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    params = list(named_parameters(model))
    lines = [f"{name} {' '.join(str(n) for n in t.shape)}" for name, t in params]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")
    (d / "config.cfg").write_text(dump_config(model.config))
    flat = np.concatenate([t.data.reshape(-1) for _, t in params]) if params else np.zeros(0)
    ntf.save(d / "weights.ntf", flat.astype(model.config.np_dtype))


def load_checkpoint(directory, estimator: FlowEstimator | None = None) -> VrtModel:
    from .harness.config import load_config

    d = Path(directory)
    cfg = load_config(d / "config.cfg")
    skeleton = init_model(cfg, estimator)
    expected = list(named_parameters(skeleton))
    manifest = [line.split() for line in (d / "manifest.txt").read_text().splitlines() if line.strip()]
    if len(manifest) != len(expected):
        raise ContractError(f"manifest lists {len(manifest)} tensors, model has {len(expected)}")
    flat = ntf.load(d / "weights.ntf")
    values, offset = {}, 0
    for (name, tensor), row in zip(expected, manifest):
        shape = tuple(int(v) for v in row[1:])
        if row[0] != name or shape != tensor.shape:
            raise ContractError(f"checkpoint entry {row[0]} {shape} != expected {name} {tensor.shape}")
        n = tensor.size
        chunk = flat[offset:offset + n]
        if chunk.size != n:
            raise ContractError("weights.ntf is shorter than the manifest")
        values[name] = Tensor(chunk.reshape(shape).astype(cfg.np_dtype), requires_grad=True)
        offset += n
    if offset != flat.size:
        raise ContractError("weights.ntf is longer than the manifest")
    return replace_parameters(skeleton, values)
