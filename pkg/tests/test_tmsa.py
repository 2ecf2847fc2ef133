import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrtkit.attention import AttentionConfig
from vrtkit.errors import ConfigError, ContractError
from vrtkit.pipeline import named_parameters, replace_parameters
from vrtkit.tensor import Tensor, grad_check_many, ops
from vrtkit.tmsa import (
    WindowSpec,
    apply_layer,
    init_self_block,
    init_tmsa_block,
    layer_spec,
    partition,
    receptive_field,
    self_only_block,
    tmsa_block,
    unpartition,
)

from . import oracles
from .support import (
    influence_backward,
    influence_forward,
    rescale_weights,
    shifted_stack,
)


def t64(a):
    return Tensor(np.asarray(a, dtype=np.float64))


def clips_of(index):
    frames = {tuple(sorted({int(f) for f in g[:, 0]})) for g in index.coords}
    return frames


def block_arrays(w):
    pair = lambda lw: (lw.weight.data, lw.bias.data)  # noqa: E731
    return {
        "ln1": (w.ln1.gamma.data, w.ln1.beta.data),
        "ln2": (w.ln2.gamma.data, w.ln2.beta.data),
        "mutual": [pair(p) for p in (w.mutual.q, w.mutual.k, w.mutual.v, w.mutual.out)],
        "self_attn": [pair(p) for p in (w.self_attn.q, w.self_attn.k, w.self_attn.v, w.self_attn.out)],
        "fuse": pair(w.fuse),
        "ffn1": pair(w.ffn1),
        "ffn2": pair(w.ffn2),
    }


# ------------------------------------------------------------ partitioning

def test_layer_spec_alternates():
    assert layer_spec(0, 8) == WindowSpec(2, 8, 0, 0)
    assert layer_spec(1, 8) == WindowSpec(2, 8, 1, 4)
    assert layer_spec(3, 7) == WindowSpec(2, 7, 1, 3)


def test_window_spec_validation():
    with pytest.raises(ConfigError):
        WindowSpec(2, 8, 2, 0)
    with pytest.raises(ConfigError):
        WindowSpec(2, 8, 0, 8)


def test_receptive_field_values():
    assert [receptive_field(i) for i in range(1, 6)] == [2, 2, 4, 6, 8]


def test_clip_layout_unshifted_and_shifted():
    x = t64(np.zeros((6, 2, 2, 1)))
    _, idx = partition(x, WindowSpec(2, 2, 0, 0))
    assert clips_of(idx) == {(0, 1), (2, 3), (4, 5)}
    _, idx = partition(x, WindowSpec(2, 2, 1, 0))
    assert clips_of(idx) == {(0, 5), (1, 2), (3, 4)}
    # The wrapped clip is ordered (T-1, 0): frame 5 is the first half.
    g, _ = idx.locate(5, 0, 0)
    assert idx.coords[g, 0, 0] == 5 and idx.coords[g, -1, 0] == 0


def test_groups_are_frame_major(rng):
    x = t64(rng.normal(size=(2, 4, 4, 3)))
    groups, idx = partition(x, WindowSpec(2, 2, 0, 0))
    assert groups.shape == (4, 8, 3)
    assert np.array_equal(groups.data[0, :4], x.data[0, :2, :2].reshape(4, 3))
    assert np.array_equal(groups.data[0, 4:], x.data[1, :2, :2].reshape(4, 3))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 7), st.integers(1, 11), st.integers(1, 11),
       st.integers(1, 4), st.sampled_from([1, 2, 3]), st.booleans(), st.data())
def test_partition_round_trip(t, h, w, m, tw, shift_t, data):
    ss = data.draw(st.integers(0, m - 1))
    spec = WindowSpec(tw, m, int(shift_t) if tw > 1 else 0, ss)
    x = t64(np.random.default_rng(t * 100 + h * 10 + w).normal(size=(t, h, w, 2)))
    groups, idx = partition(x, spec)
    assert groups.shape == (idx.groups, spec.tokens, 2)
    assert np.array_equal(unpartition(groups, idx).data, x.data)


def test_stale_index_rejected(rng):
    x = t64(rng.normal(size=(4, 4, 4, 2)))
    groups, idx = partition(x, WindowSpec(2, 2))
    _, other = partition(t64(rng.normal(size=(4, 6, 4, 2))), WindowSpec(2, 2))
    with pytest.raises(ContractError):
        unpartition(groups, other)


def test_single_window_axes_are_not_rolled():
    _, idx = partition(t64(np.zeros((2, 4, 8, 1))), WindowSpec(2, 4, 1, 2))
    assert idx.shifts == (0, 0, 2)


def test_masks_absent_without_shift(rng):
    _, idx = partition(t64(rng.normal(size=(4, 4, 4, 1))), WindowSpec(2, 2))
    m = idx.masks(np.float64)
    assert m.self_mask is None and m.mutual_mask is None


def test_shifted_masks_separate_wrapped_regions():
    _, idx = partition(t64(np.zeros((4, 4, 4, 1))), WindowSpec(2, 2, 1, 1))
    m = idx.masks(np.float64)
    allowed = m.self_mask == 0
    assert allowed.any(axis=-1).all()
    g, a = idx.locate(3, 0, 0)  # frame T-1 in the wrapped clip
    g2, b = idx.locate(0, 0, 0)
    assert g == g2 and not allowed[g, a, b]
    assert m.wrapped.sum() == 4  # one wrapped clip per spatial window
    # Shifted-window corner group holds four regions that stay mutually blind.
    g, p = idx.locate(1, 3, 3)
    _, q = idx.locate(1, 0, 0)
    assert not allowed[g, p, q]


# ------------------------------------------------------------------ blocks

def test_tmsa_block_matches_transcription(rng):
    cfg = AttentionConfig(6, 2)
    w = rescale_weights(init_tmsa_block(rng, cfg, 2, 2.0, np.float64), rng, 0.4)
    x = rng.normal(size=(3, 8, 6))
    out = tmsa_block(t64(x), w, cfg).data
    arrays = block_arrays(w)
    for g in range(3):
        assert np.abs(out[g] - oracles.tmsa_group(x[g], arrays, 2)).max() < 1e-12


def test_zero_residual_branches_give_identity(rng):
    cfg = AttentionConfig(4, 2)
    w = init_tmsa_block(rng, cfg, 2, 2.0, np.float64)
    zeros = {n: t64(np.zeros(t.shape)) for n, t in named_parameters(w)
             if n.startswith(("fuse", "ffn2"))}
    w = replace_parameters(w, zeros)
    x = t64(rng.normal(size=(2, 8, 4)))
    assert np.array_equal(tmsa_block(x, w, cfg).data, x.data)


def test_swapping_frames_swaps_outputs(rng):
    cfg = AttentionConfig(4, 2)
    w = rescale_weights(init_tmsa_block(rng, cfg, 2, 2.0, np.float64), rng, 0.4)
    x = rng.normal(size=(1, 8, 4))
    swapped = np.concatenate([x[:, 4:], x[:, :4]], axis=1)
    a = tmsa_block(t64(x), w, cfg).data
    b = tmsa_block(t64(swapped), w, cfg).data
    assert np.abs(np.concatenate([a[:, 4:], a[:, :4]], axis=1) - b).max() < 1e-12


def test_self_only_block_closed_form_single_token(rng):
    # One token per group: attention weights are exactly 1, so the block is
    # x + out(v(LN x)) followed by the MLP branch.
    cfg = AttentionConfig(4, 2)
    w = rescale_weights(init_self_block(rng, cfg, 1, 2.0, np.float64), rng, 0.4)
    x = rng.normal(size=(5, 1, 4))
    a = block_arrays_self(w)
    v = oracles.dense(oracles.layer_norm_rows(x, *a["ln1"]), *a["v"])
    mid = x + oracles.dense(v, *a["out"])
    ref = mid + oracles.dense(oracles.gelu(oracles.dense(oracles.layer_norm_rows(mid, *a["ln2"]),
                                                         *a["ffn1"])), *a["ffn2"])
    assert np.abs(self_only_block(t64(x), w, cfg).data - ref).max() < 1e-12


def block_arrays_self(w):
    pair = lambda lw: (lw.weight.data, lw.bias.data)  # noqa: E731
    return {
        "ln1": (w.ln1.gamma.data, w.ln1.beta.data),
        "ln2": (w.ln2.gamma.data, w.ln2.beta.data),
        "v": pair(w.self_attn.v), "out": pair(w.self_attn.out),
        "ffn1": pair(w.ffn1), "ffn2": pair(w.ffn2),
    }


def test_odd_token_count_rejected(rng):
    cfg = AttentionConfig(4, 1)
    w = init_tmsa_block(rng, cfg, 2, 2.0, np.float64)
    with pytest.raises(ContractError):
        tmsa_block(t64(np.zeros((1, 5, 4))), w, cfg)


@pytest.mark.parametrize("shifted", [False, True])
@pytest.mark.parametrize("rel_bias", [False, True])
def test_layer_gradients(shifted, rel_bias, rng):
    cfg = AttentionConfig(4, 2, use_relative_bias=rel_bias)
    w = rescale_weights(init_tmsa_block(rng, cfg, 2, 2.0, np.float64), rng, 0.3)
    spec = WindowSpec(2, 2, int(shifted), int(shifted))
    x = t64(rng.normal(size=(4, 4, 4, 4)))
    probe = t64(rng.normal(size=(4, 4, 4, 4)))
    names = [n for n, _ in named_parameters(w)]
    params = [t for _, t in named_parameters(w)]

    def f(ts):
        ww = replace_parameters(w, dict(zip(names, ts[1:])))
        return ops.sum(apply_layer(ts[0], spec, ww, cfg) * probe)

    assert max(grad_check_many(f, [x] + params)) < 1e-4


def test_self_only_layer_gradient(rng):
    cfg = AttentionConfig(4, 2, use_relative_bias=True)
    w = rescale_weights(init_self_block(rng, cfg, 2, 2.0, np.float64), rng, 0.3)
    spec = WindowSpec(4, 2, 1, 1)
    x = t64(rng.normal(size=(3, 4, 4, 4)))
    probe = t64(rng.normal(size=(3, 4, 4, 4)))
    errs = grad_check_many(lambda ts: ops.sum(apply_layer(ts[0], spec, w, cfg) * probe), [x])
    assert errs[0] < 1e-4


def test_single_frame_input(rng):
    cfg = AttentionConfig(4, 2)
    w = init_tmsa_block(rng, cfg, 2, 2.0, np.float64)
    x = t64(rng.normal(size=(1, 3, 5, 4)))
    for spec in (WindowSpec(2, 2), WindowSpec(2, 2, 1, 1)):
        assert apply_layer(x, spec, w, cfg).shape == (1, 3, 5, 4)


# ------------------------------------------------------ temporal influence

def clip_reachability(t: int, layers: int) -> np.ndarray:
    """Boolean product of per-layer same-clip relations; the wrap clip links nothing."""
    reach = np.eye(t, dtype=bool)
    for i in range(layers):
        start = i % 2
        adj = np.eye(t, dtype=bool)
        for a in range(start, t - 1, 2):
            adj[a, a + 1] = adj[a + 1, a] = True
        reach = (adj.astype(int) @ reach.astype(int)) > 0
    return reach


def test_wrapped_clip_does_not_mix_first_and_last_frame(rng):
    cfg = AttentionConfig(4, 2)
    stack = shifted_stack(2, cfg, 2, seed=3)[1:]  # a single shifted layer
    inf = influence_forward(stack, cfg, rng.normal(size=(6, 4, 4, 4)))
    assert not inf[0, 5] and not inf[5, 0]


@pytest.mark.parametrize("layers", [1, 2, 3, 4])
def test_influence_follows_clip_reachability(layers, rng):
    cfg = AttentionConfig(4, 2)
    stack = shifted_stack(layers, cfg, 2, seed=layers)
    x = rng.normal(size=(10, 4, 4, 4))
    fwd = influence_forward(stack, cfg, x)
    assert np.array_equal(fwd, influence_backward(stack, cfg, x))
    assert np.array_equal(fwd, clip_reachability(10, layers))


@pytest.mark.parametrize("layers", [2, 3, 4, 5])
def test_influence_bounded_by_receptive_field(layers, rng):
    cfg = AttentionConfig(4, 2)
    stack = shifted_stack(layers, cfg, 2, seed=layers)
    inf = influence_forward(stack, cfg, rng.normal(size=(16, 4, 4, 4)))
    idx = np.arange(16)
    far = np.abs(idx[:, None] - idx[None, :]) > receptive_field(layers)
    assert not inf[far].any()
