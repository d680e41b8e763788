"""Sub-network contracts: shapes, ranges, codes, attention blending."""

import numpy as np
import pytest

from aimkit import autodiff as ad
from aimkit import losses as lo
from aimkit import networks as nets
from aimkit.autodiff import Tape, Tensor
from aimkit.errors import ConfigError, DimensionError, UsageError


def build(image_size=16, n_ids=12, seed=1, **kw):
    cfg = nets.ModelConfig(image_size=image_size, num_identities=n_ids, seed=seed, **kw)
    model = nets.AIMModel(cfg)
    model.set_training(False)
    return model


def batch(n, size, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(-1, 1, (n, 3, size, size)).astype(np.float32))


# -- age condition codes ------------------------------------------------------

def test_pure_code_layout():
    np.testing.assert_array_equal(nets.age_code(0), [1, -1, -1, -1, -1, -1, -1])
    for phase in range(7):
        code = nets.age_code(phase)
        assert code[phase] == 1 and (code == -1).sum() == 6


def test_age_code_rejects_bad_phase():
    for phase in (-1, 7, 2.5):
        with pytest.raises(UsageError):
            nets.age_code(phase)


def test_interpolation_endpoints_and_midpoint():
    c0, c1 = nets.age_code(0, np.float64), nets.age_code(1, np.float64)
    np.testing.assert_array_equal(nets.interpolate_codes(c0, c1, 0.0), c0)
    np.testing.assert_array_equal(nets.interpolate_codes(c0, c1, 1.0), c1)
    mid = nets.interpolate_codes(c0, c1, 0.5)
    np.testing.assert_array_equal(mid, [0, 0, -1, -1, -1, -1, -1])


def test_interpolation_requires_adjacent_pure_codes():
    with pytest.raises(UsageError):
        nets.interpolate_codes(nets.age_code(0), nets.age_code(2), 0.5)
    with pytest.raises(UsageError):
        nets.interpolate_codes(nets.age_code(0), nets.age_code(1), 1.5)
    blended = nets.interpolate_codes(nets.age_code(0), nets.age_code(1), 0.3)
    with pytest.raises(UsageError):
        nets.interpolate_codes(blended, nets.age_code(1), 0.5)


def test_latent_prior_range_and_shape():
    sample = nets.sample_latent_prior(np.random.default_rng(0), 32)
    assert sample.shape == (32, 256)
    assert sample.min() >= -1 and sample.max() <= 1


# -- encoder ------------------------------------------------------------------

@pytest.mark.parametrize("size", [16, 32, 64])
def test_encode_decode_shape_pipeline(size):
    model = build(image_size=size, n_ids=5)
    x = batch(2, size)
    f = model.encode(x)
    assert f.shape == (2, model.cfg.feature_dim)
    att, feat, xhat = model.decode(f, nets.phase_codes(np.array([0, 6])), x)
    assert xhat.shape == x.shape
    assert feat.shape == x.shape
    assert att.shape == (2, 1, size, size)


def test_encoder_output_strictly_inside_unit_interval():
    model = build()
    f = model.encode(batch(4, 16))
    assert np.all(f.data > -1) and np.all(f.data < 1)


def test_encoder_deterministic_at_inference():
    model = build()
    x = batch(3, 16)
    f1 = model.encode(x)
    f2 = model.encode(x)
    np.testing.assert_array_equal(f1.data, f2.data)


def test_encoder_rejects_wrong_channels_and_size():
    model = build()
    with pytest.raises(DimensionError):
        model.encode(Tensor(np.zeros((1, 1, 16, 16), dtype=np.float32)))
    with pytest.raises(DimensionError):
        model.encode(Tensor(np.zeros((1, 3, 32, 32), dtype=np.float32)))


# -- decoder and attention blend ----------------------------------------------

def test_blend_extremes_are_exact():
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)))
    feat = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)).astype(np.float32))
    zeros = Tensor(np.zeros((2, 1, 8, 8), dtype=np.float32))
    ones = Tensor(np.ones((2, 1, 8, 8), dtype=np.float32))
    np.testing.assert_array_equal(
        nets.blend_with_attention(zeros, feat, x).data, x.data)
    np.testing.assert_array_equal(
        nets.blend_with_attention(ones, feat, x).data, feat.data)


def test_blend_half_mask_midpoint():
    x = Tensor(np.zeros((1, 3, 4, 4), dtype=np.float32))
    feat = Tensor(np.ones((1, 3, 4, 4), dtype=np.float32))
    half = Tensor(np.full((1, 1, 4, 4), 0.5, dtype=np.float32))
    out = nets.blend_with_attention(half, feat, x)
    np.testing.assert_allclose(out.data, 0.5)


def test_blend_is_convex_combination_on_random_triples():
    rng = np.random.default_rng(42)
    for _ in range(1000):
        x = rng.uniform(-1, 1, (1, 3, 2, 2)).astype(np.float32)
        feat = rng.uniform(-1, 1, (1, 3, 2, 2)).astype(np.float32)
        att = rng.uniform(0, 1, (1, 1, 2, 2)).astype(np.float32)
        out = nets.blend_with_attention(Tensor(att), Tensor(feat), Tensor(x)).data
        lo_b = np.minimum(x, feat) - 1e-6
        hi_b = np.maximum(x, feat) + 1e-6
        assert np.all(out >= lo_b) and np.all(out <= hi_b)


def test_decoder_outputs_in_pixel_range():
    model = build()
    x = batch(4, 16)
    att, feat, xhat = model.decode(model.encode(x), nets.phase_codes(np.arange(4) % 7), x)
    assert att.data.min() >= 0 and att.data.max() <= 1
    assert feat.data.min() >= -1 and feat.data.max() <= 1
    assert xhat.data.min() >= -1 and xhat.data.max() <= 1


def test_decoder_without_attention_returns_feature_image():
    model = build(use_attention=False)
    x = batch(2, 16)
    att, feat, xhat = model.decode(model.encode(x), nets.phase_codes(np.array([1, 2])), x)
    assert att is None
    assert xhat is feat


def test_decode_rejects_mismatched_code_batch():
    model = build()
    x = batch(2, 16)
    with pytest.raises(DimensionError):
        model.decode(model.encode(x), nets.phase_codes(np.array([0])), x)


# -- discriminators and domain heads -------------------------------------------

def test_latent_discriminator_ranges_and_shapes():
    model = build(n_ids=9)
    f = model.encode(batch(5, 16))
    realness, logits = model.discriminate_latent(f)
    assert realness.shape == (5, 1)
    assert np.all(realness.data > 0) and np.all(realness.data < 1)
    assert logits.shape == (5, 9)


def test_patch_scores_count_and_age_range():
    model = build(image_size=32)          # default patch 8 -> 16 patches
    x = batch(2, 32)
    scores, age_est = model.discriminate_patches(x, nets.phase_codes(np.array([0, 3])))
    assert scores.shape == (16 * 2, 1)
    assert np.all(scores.data > 0) and np.all(scores.data < 1)
    assert age_est.shape == (2, 7)
    assert np.all(np.abs(age_est.data) < 1)


def test_patch_grid_rule_at_desk_scale():
    model = build(image_size=16, patch_size=4)
    scores, _ = model.discriminate_patches(batch(1, 16), nets.phase_codes(np.array([0])))
    assert scores.shape == (16, 1)        # (16/4)^2 patches


def test_indivisible_patch_grid_rejected():
    with pytest.raises(ConfigError):
        build(image_size=16, patch_size=5)


def test_domain_heads_softmax_and_separation():
    model = build()
    f = model.encode(batch(3, 16))
    probs_c = model.classify_domain(f)
    probs_r = model.regularize_domain(f)
    np.testing.assert_allclose(probs_c.data.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_allclose(probs_r.data.sum(axis=1), 1.0, atol=1e-6)

    before = model.regularize_domain(f).data.copy()
    for _, tensor in model.domain_classifier.params():
        tensor.data = tensor.data + 0.05
    np.testing.assert_array_equal(model.regularize_domain(f).data, before)
    assert not np.array_equal(model.classify_domain(f).data, probs_c.data)


def test_classify_domain_gradient_reversal_contract():
    """Gradient reaching the features equals -coeff times the plain gradient,
    bit for bit; encoder parameters agree to float accumulation order."""
    model = build(seed=7)
    model.set_training(False)
    x = batch(4, 16, seed=3)
    labels = np.array([0, 2, 4, 6])
    coeff = np.float32(model.cfg.grl_coeff)

    def domain_grad(bypass):
        model.zero_grad()
        with Tape() as tape:
            f = model.encode(x)
            loss = lo.loss_cad(model.classify_domain(f, bypass_grl=bypass), labels)
            tape.backward(loss, wrt=[f])
        return f.grad

    with_grl = domain_grad(False)
    without = domain_grad(True)
    np.testing.assert_array_equal(with_grl, (-coeff) * without)


def test_parameter_names_unique_and_checkpointable():
    model = build()
    params = model.parameters()
    assert len(params) == len(set(params))
    assert any(name.startswith("encoder/") for name in params)
    assert any(name.startswith("patch_disc/") for name in params)
