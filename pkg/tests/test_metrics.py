import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import structural_similarity

from scenevid.errors import ContractError
from scenevid.metrics import (
    DownsampleEmbedder,
    LearnedDepthEstimator,
    RenderedDepthLookup,
    consistency,
    d_rmse,
    input_similarity,
    sequence_d_rmse,
    ssim,
)
from scenevid.scene3d import DEMO_SCENE, load_scene, render_animation


def rand_image(seed, shape=(32, 32, 3)):
    return np.random.default_rng(seed).random(shape)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), noise=st.floats(0.0, 0.5))
def test_ssim_matches_independent_implementation(seed, noise):
    a = rand_image(seed)
    b = np.clip(a + noise * np.random.default_rng(seed + 1).standard_normal(a.shape), 0, 1)
    ref = structural_similarity(a, b, gaussian_weights=True, sigma=1.5, use_sample_covariance=False, data_range=1.0, channel_axis=2)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-9)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_ssim_identity_and_symmetry(seed):
    a, b = rand_image(seed), rand_image(seed + 7)
    assert abs(ssim(a, a) - 1.0) < 1e-9
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9


def test_ssim_anticorrelated_binary_image():
    x = (np.random.default_rng(0).random((32, 32)) > 0.5).astype(float)
    assert ssim(x, 1.0 - x) < 0


def test_ssim_constant_with_tiny_noise():
    c = np.full((24, 24), 0.4)
    n = c + 1e-4 * np.random.default_rng(1).standard_normal(c.shape)
    assert ssim(c, n) > 0.99


def test_ssim_shape_checks():
    with pytest.raises(ContractError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))
    with pytest.raises(ContractError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_d_rmse_closed_forms():
    ref = np.zeros((2, 8, 8))
    cov = np.zeros((2, 8, 8), bool)
    cov[:, 2:6, 2:6] = True
    assert d_rmse(ref, ref, cov) == 0.0
    assert d_rmse(np.full_like(ref, 0.5), ref, cov, normalize=False) == 0.5
    with pytest.raises(ContractError):
        d_rmse(ref, ref, np.zeros_like(cov))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 1000), scale=st.floats(0.1, 10), shift=st.floats(-3, 3))
def test_d_rmse_is_zero_iff_agreement_up_to_affine(seed, scale, shift):
    rng = np.random.default_rng(seed)
    ref = rng.random((3, 8, 8)) + 1
    cov = rng.random((3, 8, 8)) > 0.3
    cov[0, 0, 0] = cov[0, 0, 1] = True
    ref[0, 0, 0], ref[0, 0, 1] = 0.5, 3.0
    assert d_rmse(scale * ref + shift, ref, cov) < 1e-9
    other = ref.copy()
    idx = np.argwhere(cov)[len(np.argwhere(cov)) // 2]
    other[tuple(idx)] += 0.7
    assert d_rmse(other, ref, cov) > 0
    # values outside coverage never matter
    noisy = ref + np.where(cov, 0.0, rng.standard_normal(ref.shape))
    assert d_rmse(noisy, ref, cov) < 1e-12


def test_embedder_unit_norm_and_degenerate_zero():
    emb = DownsampleEmbedder()
    v = emb(rand_image(3))
    assert abs(np.linalg.norm(v) - 1) < 1e-6 and abs(v.mean()) < 1e-12
    assert np.all(emb(np.full((32, 32, 3), 0.5)) == 0)
    assert abs(np.linalg.norm(emb(rand_image(4, (20, 28, 3)))) - 1) < 1e-6


def test_consistency_identities():
    x = rand_image(5)
    assert abs(consistency([x, x, x]) - 1) < 1e-6
    neg = 1.0 - x  # zero-mean embedding flips sign
    assert abs(consistency([x, neg, x, neg]) + 1) < 1e-6
    frames = [rand_image(s) for s in range(5)]
    assert consistency(frames) == pytest.approx(consistency(frames[::-1]), abs=1e-15)
    with pytest.raises(ContractError):
        consistency([x])


def test_input_similarity():
    x = rand_image(6)
    assert abs(input_similarity([x, x], x) - 1) < 1e-6
    assert input_similarity([np.full_like(x, 0.5)], x) == 0.0


def test_depth_lookup_and_learned_estimator():
    packs = render_animation(load_scene(DEMO_SCENE).build(n_frames=6), (32, 32))
    look = RenderedDepthLookup(packs)
    assert np.array_equal(look(packs[2].rgb), packs[2].depth)
    with pytest.raises(ContractError):
        look(np.zeros((32, 32, 3)))
    est = LearnedDepthEstimator(lookup=look)
    assert sequence_d_rmse([p.rgb for p in packs], packs, est) == 0.0
    rgb = np.stack([p.rgb for p in packs])
    depth = np.stack([p.depth for p in packs])
    trained = LearnedDepthEstimator.train(rgb, depth, steps=60, batch=4)
    out = trained(packs[0].rgb)
    assert out.shape == (32, 32) and np.all(out >= 0)
