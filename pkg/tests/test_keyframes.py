import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from scenevid.denoiser import DenoiserSpec, build_image_denoiser, encode
from scenevid.denoiser.layers import scaled_dot_attention
from scenevid.denoiser.text import PromptEmbedding
from scenevid.diffusion import TapHooks, ddim_invert, ddim_sample
from scenevid.diffusion.samplers import ddim_timesteps
from scenevid.diffusion.trace import FeatureTrace
from scenevid.errors import ConfigError, ContractError
from scenevid.keyframes import (
    ExtendedAttentionProcessor,
    FeatureInjector,
    InjectionConfig,
    KeyframeConfig,
    KeyframeSet,
    attention_weights,
    concat_frames,
    expected_firings,
    extended_attention,
    generate_keyframes,
    keyframe_indices,
)
from scenevid.scene3d import DEMO_SCENE, load_scene, render_animation

SMALL = DenoiserSpec(latent_hw=(8, 8), widths=(8, 16), heads=1, context_dim=8, context_tokens=4, time_dim=16)


def model(seed=0, control=True):
    m = build_image_denoiser(SMALL, seed=seed, control=control)
    for p in m.parameters():
        p.data.add_(0.02 * torch.randn_like(p))  # make zero-init paths contribute
    return m


def demo_packs(idx=(0, 8, 16)):
    packs = render_animation(load_scene(DEMO_SCENE).build(n_frames=24), (16, 16))
    return [packs[i] for i in idx]


def qkv(seed, shape):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(shape, generator=g, dtype=torch.float64) for _ in range(3)]


# --- extended attention -------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n_tok=st.integers(1, 9), d=st.integers(1, 8))
def test_single_keyframe_is_standard_attention(seed, n_tok, d):
    q, k, v = qkv(seed, (1, n_tok, d))
    ref = scaled_dot_attention(q, k, v, 1)
    assert torch.equal(ExtendedAttentionProcessor()(q, k, v, 1), ref)
    # unbatched matmul may round differently in the last bit
    assert (extended_attention(q[0], k[0], v[0], d) - ref[0]).abs().max().item() < 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 5))
def test_duplicated_keys_renormalize(seed, n):
    q, k, v = qkv(seed, (6, 4))
    single = extended_attention(q, k, v, 4)
    dup = extended_attention(q, k.repeat(n, 1), v.repeat(n, 1), 4)
    assert (dup - single).abs().max().item() < 1e-6


def test_scalar_oracle():
    # one token per frame, d = 1, three keyframes
    q, ks, vs = 0.7, [0.3, -1.2, 2.0], [1.5, -0.5, 0.25]
    e = [math.exp(q * k_ / math.sqrt(1.0)) for k_ in ks]
    ref = sum(w * v_ for w, v_ in zip(e, vs)) / sum(e)
    out = extended_attention(
        torch.tensor([[q]], dtype=torch.float64),
        torch.tensor(ks, dtype=torch.float64)[:, None],
        torch.tensor(vs, dtype=torch.float64)[:, None],
        1,
    )
    assert abs(out.item() - ref) < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_softmax_rows_sum_to_one(seed):
    q, k, _ = qkv(seed, (5, 3))
    w = attention_weights(q, torch.cat([k, 3 * k, -k]), 3)
    assert (w.sum(-1) - 1).abs().max().item() < 1e-6


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), perm=st.permutations([1, 2, 3]))
def test_permutation_covariance(seed, perm):
    q, k, v = qkv(seed, (4, 5, 6))
    proc = ExtendedAttentionProcessor()
    out = proc(q, k, v, 2)
    order = [0, *perm]
    # frame 0 keeps its query; the other frames' k/v blocks are reordered
    out_p = proc(q, k[order], v[order], 2)
    assert (out_p[0] - out[0]).abs().max().item() < 1e-12


def test_contract_errors_and_groups():
    q = torch.zeros(2, 3)
    with pytest.raises(ContractError):
        extended_attention(q, q, q, 0)
    with pytest.raises(ContractError):
        extended_attention(q, torch.zeros(4, 3), torch.zeros(5, 3), 3)
    x = torch.arange(4 * 2 * 1.0).view(4, 2, 1)
    grouped = concat_frames(x, group=2)
    assert grouped.shape == (4, 4, 1)
    assert torch.equal(grouped[0], grouped[1]) and torch.equal(grouped[2, :, 0], torch.tensor([4.0, 5, 6, 7]))
    with pytest.raises(ContractError):
        concat_frames(x, group=3)


# --- injection ------------------------------------------------------------------


def inverted(m, packs, steps=6, processor=None):
    cond = PromptEmbedding.embed("a box", m.spec.context_tokens, m.spec.context_dim)
    rgb = torch.stack([torch.as_tensor(p.rgb, dtype=torch.float32).permute(2, 0, 1) for p in packs])
    ctrl = m.control_from_depth(torch.stack([torch.as_tensor(p.depth, dtype=torch.float32) for p in packs]))
    z, trace = ddim_invert(encode(rgb), m, m.schedule, steps, cond, control=ctrl)
    visible = np.stack([p.coverage_mask for p in packs])
    return z, trace, cond, ctrl, visible


def sample(m, z, cond, ctrl, hooks, steps=6):
    return ddim_sample(z, m, m.schedule, steps, cond, hooks=hooks, control=ctrl)


def test_tau_one_and_invisible_masks_are_bitwise_noops():
    m = model(1)
    packs = demo_packs()
    with torch.no_grad():
        z, trace, cond, ctrl, visible = inverted(m, packs)
        plain = sample(m, z, cond, ctrl, None)
        off = FeatureInjector(trace, InjectionConfig(1.0, 1.0), m, visible, m.schedule.T)
        assert torch.equal(sample(m, z, cond, ctrl, off), plain)
        assert sum(off.firings.values()) == 0
        blind = FeatureInjector(trace, InjectionConfig(0.0, 0.0), m, np.zeros_like(visible), m.schedule.T)
        assert torch.equal(sample(m, z, cond, ctrl, blind), plain)
        assert sum(blind.firings.values()) > 0
        on = FeatureInjector(trace, InjectionConfig(0.0, 0.0), m, visible, m.schedule.T)
        assert not torch.equal(sample(m, z, cond, ctrl, on), plain)


def test_firing_counts_follow_threshold_arithmetic():
    m = model(2)
    steps = 50
    packs = demo_packs((0,))
    with torch.no_grad():
        z, trace, cond, ctrl, visible = inverted(m, packs, steps)
        inj = FeatureInjector(trace, InjectionConfig(0.4, 0.0), m, visible, m.schedule.T)
        sample(m, z, cond, ctrl, inj, steps)
    # sampling visits round(i * 999 / 50) for i = 50..1; t / 1000 >= 0.4 from i = 20 on
    assert [round(i * 999 / 50) for i in (19, 20)] == [380, 400]
    for tap in m.spec.conv_taps:
        assert inj.firings[tap] == 31
    for tap in m.spec.attn_taps:
        assert inj.firings[tap] == 50
    ts = ddim_timesteps(m.schedule, steps)[1:]
    assert expected_firings(ts, 0.4, 2, m.schedule.T) == 62
    assert expected_firings(ts, 0.0, 2, m.schedule.T) == 100


def test_mask_locality_of_trace_values():
    m = model(3)
    packs = demo_packs()
    g = torch.Generator().manual_seed(0)
    with torch.no_grad():
        z, trace, cond, ctrl, visible = inverted(m, packs)
        assert visible.any() and not visible.all()
        cfg = InjectionConfig(0.0, 0.0)
        ref_inj = FeatureInjector(trace, cfg, m, visible, m.schedule.T)
        noisy = FeatureTrace(trace.tap_ids, trace.tap_shapes)
        for (t, tap), value in trace.items():
            mask = ref_inj.masks[tap]
            if isinstance(value, tuple):
                value = tuple(torch.where(mask, v, torch.randn(v.shape, generator=g)) for v in value)
            else:
                value = torch.where(mask, value, torch.randn(value.shape, generator=g))
            noisy.record(t, tap, value)
        a = sample(m, z, cond, ctrl, ref_inj)
        b = sample(m, z, cond, ctrl, FeatureInjector(noisy, cfg, m, visible, m.schedule.T))
    assert torch.equal(a, b)


def test_injection_config_validation_and_missing_trace():
    m = model()
    with pytest.raises(ConfigError):
        InjectionConfig(tau_conv=1.5)
    with pytest.raises(ConfigError):
        InjectionConfig(conv_taps=("down0.conv",)).resolve(m)
    empty = FeatureTrace(m.tap_ids)
    inj = FeatureInjector(empty, InjectionConfig(0.0, 0.0), m, np.ones((1, 16, 16), bool), 1000)
    with pytest.raises(ContractError):
        inj(0, 500)


# --- keyframe generation ----------------------------------------------------------


def test_inert_guidance_equals_invert_then_sample():
    m = build_image_denoiser(SMALL, seed=4, control=True)  # zero-init control
    packs = demo_packs((5,))
    cfg = KeyframeConfig(steps=8, inject=False, extended_attention=False, prompt="a box")
    ks = generate_keyframes(packs, m, cfg)
    cond = PromptEmbedding.embed("a box", m.spec.context_tokens, m.spec.context_dim)
    with torch.no_grad():
        z0 = encode(torch.as_tensor(packs[0].rgb, dtype=torch.float32).permute(2, 0, 1)[None])
        z, _ = ddim_invert(z0, m, m.schedule, 8, cond)
        ref = ddim_sample(z, m, m.schedule, 8, cond)
    assert torch.equal(ks.latents, ref)
    # a single keyframe with extended attention is still plain attention
    ext = generate_keyframes(packs, m, KeyframeConfig(steps=8, inject=False, prompt="a box"))
    assert torch.equal(ext.latents, ref)


def test_generation_is_deterministic_and_seeded():
    m = model(5)
    packs = demo_packs()
    cfg = KeyframeConfig(steps=6)
    a, b = generate_keyframes(packs, m, cfg), generate_keyframes(packs, m, cfg)
    assert np.array_equal(a.frames, b.frames)
    assert a.info["firings"] and a.info["config_hash"] == cfg.digest()
    u = KeyframeConfig(steps=6, guided=False, seed=1)
    assert np.array_equal(generate_keyframes(packs, m, u).frames, generate_keyframes(packs, m, u).frames)
    other = KeyframeConfig(steps=6, guided=False, seed=2)
    assert not np.array_equal(generate_keyframes(packs, m, u).frames, generate_keyframes(packs, m, other).frames)


def test_extended_attention_couples_keyframes():
    m = model(6)
    packs = demo_packs()
    cfg = KeyframeConfig(steps=6, inject=False)
    joint = generate_keyframes(packs, m, cfg)
    alone = generate_keyframes(packs[:1], m, cfg)
    assert not np.allclose(joint.frames[0], alone.frames[0])
    solo = KeyframeConfig(steps=6, inject=False, extended_attention=False)
    assert np.allclose(generate_keyframes(packs, m, solo).frames[0], generate_keyframes(packs[:1], m, solo).frames[0], atol=1e-5)


def test_keyframe_set_io_and_indices(tmp_path):
    m = model(7)
    packs = demo_packs()
    ks = generate_keyframes(packs, m, KeyframeConfig(steps=4), frame_indices=(3, 11, 19))
    ks.save(tmp_path / "k")
    back = KeyframeSet.load(tmp_path / "k")
    assert back.frame_indices == (3, 11, 19) and torch.equal(back.latents, ks.latents)
    assert np.allclose(back.frames, ks.frames)
    assert len(list((tmp_path / "k").glob("key_*.png"))) == 3
    with pytest.raises(ContractError):
        KeyframeSet(ks.frames, (3, 3, 19), ks.latents)
    assert keyframe_indices(61, 15) == [0, 15, 30, 45, 60]
    assert keyframe_indices(20, 8) == [0, 8, 16, 19]
    with pytest.raises(ContractError):
        generate_keyframes([], m)
