"""Loss values against independently computed references, and gradients."""

import math

import numpy as np
import pytest

from aimkit import autodiff as ad
from aimkit import losses as lo
from aimkit.autodiff import Tape, Tensor, grad_check
from aimkit.errors import UsageError
from aimkit.gradcheck import loss_checks

F64 = np.float64


def t(data, grad=False):
    return Tensor(np.asarray(data, dtype=F64), requires_grad=grad)


# -- reference values --------------------------------------------------------

def test_default_weights_exact():
    assert lo.LossWeights().to_tuple() == (
        0.1, 0.1, 0.01, 1.0, 0.01, 0.05, 0.1, 1e-5, 0.03,
        0.01, 0.05, 0.1, 1e-5, 0.03)


def test_cad_perfect_classifier_is_zero():
    probs = np.zeros((3, 7))
    probs[np.arange(3), [0, 3, 6]] = 1.0
    val = lo.loss_cad(t(probs), np.array([0, 3, 6])).item()
    assert abs(val) < 1e-10


def test_cad_uniform_is_ln7():
    probs = t(np.full((5, 7), 1 / 7))
    assert abs(lo.loss_cad(probs, np.arange(5) % 7).item() - math.log(7)) < 1e-12


def test_cer_at_uniform_matches_closed_form():
    # independent evaluation of the smoothed binary cross-entropy
    expected = 7 * (-(1 / 7) * math.log(1 / 7) - (6 / 7) * math.log(6 / 7))
    val = lo.loss_cer(t(np.full((4, 7), 1 / 7))).item()
    assert abs(val - expected) < 1e-12


def test_cer_gradient_vanishes_at_target():
    p = t(np.full((2, 7), 1 / 7), grad=True)
    with Tape() as tape:
        tape.backward(lo.loss_cer(p))
    assert np.abs(p.grad).max() < 1e-12


def test_cer_diverges_when_output_saturates():
    val = lo.loss_cer(t(np.full((1, 7), 1.0 - 1e-15))).item()
    assert val > 20.0   # clamped large, not infinite
    assert np.isfinite(val)


def test_adv1_all_half_scores():
    s = t(np.full((6, 1), 0.5))
    pair = lo.loss_adv1(s, s)
    assert abs(pair.d_loss.item() - 2 * math.log(2)) < 1e-12
    assert pair.g_term.item() == pair.d_loss.item()


def test_adv1_perfect_discriminator_near_zero():
    prior = t(np.full((4, 1), 1.0 - 1e-12))
    enc = t(np.full((4, 1), 1e-12))
    assert lo.loss_adv1(prior, enc).d_loss.item() < 1e-6


def test_ip_uniform_logits_ln_n():
    logits = t(np.zeros((3, 10)))
    val = lo.loss_ip(logits, np.array([0, 5, 9])).item()
    assert abs(val - math.log(10)) < 1e-12


def test_ip_peaked_logits_near_zero():
    logits = np.full((2, 5), -40.0)
    logits[np.arange(2), [1, 4]] = 40.0
    assert lo.loss_ip(t(logits), np.array([1, 4])).item() < 1e-10


def test_ip_label_out_of_range():
    with pytest.raises(UsageError):
        lo.loss_ip(t(np.zeros((2, 5))), np.array([0, 5]))


def test_adv2_patch_count_mismatch():
    with pytest.raises(UsageError):
        lo.loss_adv2(t(np.full((8, 1), 0.5)), t(np.full((6, 1), 0.5)))


def test_adv2_half_scores():
    s = t(np.full((16, 1), 0.5))
    assert abs(lo.loss_adv2(s, s).d_loss.item() - 2 * math.log(2)) < 1e-12


def test_ae_exact_match_zero_and_single_offset():
    code = -np.ones((1, 7))
    code[0, 2] = 1.0
    assert lo.loss_ae(t(code), t(code), code).item() == 0.0
    off = code.copy()
    off[0, 0] += 0.1
    val = lo.loss_ae(t(off), t(code), code).item()
    assert abs(val - 0.01) < 1e-12


def test_ae_symmetric_in_error_sign():
    code = -np.ones((1, 7))
    plus, minus = code.copy(), code.copy()
    plus[0, 3] += 0.2
    minus[0, 3] -= 0.2
    a = lo.loss_ae(t(plus), t(code), code).item()
    b = lo.loss_ae(t(minus), t(code), code).item()
    assert abs(a - b) < 1e-12


def test_mc_identity_and_unit_offset():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 3, 4, 4))
    assert lo.loss_mc(t(x), t(x)).item() == 0.0
    assert abs(lo.loss_mc(t(x + 1.0), t(x)).item() - 1.0) < 1e-12


def test_mc_gradient_closed_form():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(1, 3, 2, 2))
    xhat = t(x + rng.normal(size=x.shape), grad=True)
    with Tape() as tape:
        tape.backward(lo.loss_mc(xhat, t(x)))
    np.testing.assert_allclose(xhat.grad, 2 * (xhat.data - x) / x.size, rtol=1e-12)


def test_tv_fixture_two_by_two():
    img = t([[[[0.0, 1.0], [0.0, 1.0]]]])
    assert lo.loss_tv(img).item() == 2.0


def test_tv_constant_image_zero_gradient():
    img = t(np.full((1, 3, 4, 4), 0.7), grad=True)
    with Tape() as tape:
        out = lo.loss_tv(img)
        tape.backward(out)
    assert out.item() == 0.0
    assert np.abs(img.grad).max() == 0.0


def test_tv_translation_invariant():
    rng = np.random.default_rng(2)
    img = rng.normal(size=(2, 3, 5, 5))
    a = lo.loss_tv(t(img)).item()
    b = lo.loss_tv(t(img + 3.21)).item()
    assert abs(a - b) < 1e-9


def test_att_zero_mask_and_ones_mask():
    zero = t(np.zeros((1, 1, 6, 5)))
    assert lo.loss_att(zero).item() == 0.0
    ones = t(np.ones((1, 1, 6, 5)))
    assert abs(lo.loss_att(ones).item() - 30.0) < 1e-12   # H*W, smoothness zero


def test_att_checkerboard_exceeds_constant_of_equal_mean():
    h = w = 6
    checker = np.indices((h, w)).sum(axis=0) % 2
    const = np.full((h, w), 0.5)
    a = lo.loss_att(t(checker[None, None].astype(float))).item()
    b = lo.loss_att(t(const[None, None])).item()
    assert a > b


def test_composites_with_unit_parts():
    parts = {name: 1.0 for name in lo.LOSS_NAMES}
    w = lo.LossWeights()
    assert abs(lo.composite_encoder_loss(parts, w) - 1.16001) < 1e-9
    assert abs(lo.composite_decoder_loss(parts, w) - 0.17001) < 1e-9
    assert abs(lo.overall_loss(parts, w) - 1.16001) < 1e-9


def test_composites_with_zero_parts():
    parts = {name: 0.0 for name in lo.LOSS_NAMES}
    w = lo.LossWeights()
    assert lo.composite_encoder_loss(parts, w) == 0.0
    assert lo.composite_decoder_loss(parts, w) == 0.0


def test_composite_missing_part_is_usage_error():
    parts = {name: 1.0 for name in lo.LOSS_NAMES if name != "mc"}
    with pytest.raises(UsageError):
        lo.composite_encoder_loss(parts, lo.LossWeights())


def test_weight_scaling_scales_term_contribution():
    rng = np.random.default_rng(3)
    parts = {name: float(v) for name, v in
             zip(lo.LOSS_NAMES, rng.uniform(0.1, 2.0, len(lo.LOSS_NAMES)))}
    w1 = lo.LossWeights()
    w2 = lo.LossWeights(mc_enc=2 * w1.mc_enc)
    delta = lo.composite_encoder_loss(parts, w2) - lo.composite_encoder_loss(parts, w1)
    assert abs(delta - w1.mc_enc * parts["mc"]) < 1e-12


def test_negative_weight_rejected():
    with pytest.raises(UsageError):
        lo.LossWeights(ip=-1.0)


def test_sign_flip_of_adversarial_weight_flips_gradient():
    rng = np.random.default_rng(4)
    score = Tensor(rng.uniform(0.2, 0.8, (4, 1)), requires_grad=True, dtype=F64)
    prior = t(rng.uniform(0.2, 0.8, (4, 1)))

    def grad_with(sign):
        score.zero_grad()
        with Tape() as tape:
            term = lo.loss_adv1(prior, score).g_term
            tape.backward(ad.multiply(term, Tensor(np.asarray(sign, F64))))
        return score.grad.copy()

    np.testing.assert_allclose(grad_with(-0.01), -grad_with(0.01), rtol=1e-12)


def test_every_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(11)
    worst = {}
    for name, (fn, tensors) in loss_checks(rng).items():
        worst[name] = grad_check(fn, tensors)
    bad = {k: v for k, v in worst.items() if v >= 1e-5}
    assert not bad, f"losses failing the 1e-5 gradient bound: {bad}"


def test_report_round_trip_and_finiteness():
    parts = {name: 1.0 for name in lo.LOSS_NAMES}
    report = lo.LossReport.from_parts(3, parts, lo.LossWeights())
    report.validate_finite()
    row = report.csv_row()
    assert row.startswith("3,")
    assert len(row.split(",")) == len(lo.LossReport.CSV_HEADER.split(","))

    report.values["mc"] = float("nan")
    with pytest.raises(Exception, match="mc"):
        report.validate_finite()
