"""Layer behaviour: gradient reversal, transposed conv, batch norm."""

import numpy as np
import pytest

from aimkit import autodiff as ad
from aimkit import layers as ly
from aimkit.autodiff import Tape, Tensor, grad_check
from aimkit.errors import ConfigError

F64 = np.float64


def test_grl_forward_is_identity():
    grl = ly.GradReversal(0.1)
    for data in ([1.0, 2.0, 3.0], np.zeros(5),
                 np.random.default_rng(0).normal(size=256)):
        x = Tensor(np.asarray(data, dtype=F64))
        out = grl(x)
        np.testing.assert_array_equal(out.data, x.data)


def test_grl_backward_is_exact_negation():
    grl = ly.GradReversal(1.0)
    up = np.array([1.0, -2.0])
    np.testing.assert_array_equal(grl.backward_rule(up), [-1.0, 2.0])

    grl01 = ly.GradReversal(0.1)
    np.testing.assert_array_equal(grl01.backward_rule(np.array([10.0])), [-1.0])
    np.testing.assert_array_equal(grl01.backward_rule(np.zeros(3)), np.zeros(3))


def test_grl_round_trip_equals_scaled_plain_gradient():
    """grad of loss(grl(x)) must equal -coeff * grad of loss(x), bit-exact."""
    rng = np.random.default_rng(5)
    coeff = 0.1
    grl = ly.GradReversal(coeff)
    x = Tensor(rng.normal(size=16), requires_grad=True, dtype=F64)
    w = Tensor(rng.normal(size=16), dtype=F64)

    def loss_of(t):
        return ad.sum_(ad.square(ad.multiply(t, w)))

    with Tape() as tape:
        tape.backward(loss_of(grl(x)))
    grad_with = x.grad.copy()

    x.zero_grad()
    with Tape() as tape:
        tape.backward(loss_of(x))
    expected = (-np.float64(coeff)) * x.grad
    np.testing.assert_array_equal(grad_with, expected)


def test_grl_rejects_negative_coefficient():
    with pytest.raises(ConfigError):
        ly.GradReversal(-0.5)


def test_grl_finite_difference_against_scaled_reference():
    rng = np.random.default_rng(2)
    grl = ly.GradReversal(0.1)
    x = Tensor(rng.normal(size=8), requires_grad=True, dtype=F64)
    err = grad_check(lambda: ad.mean(ad.square(grl(x))), x, reference_scale=-0.1)
    assert err < 1e-6


def test_conv_transpose_stride2_doubles_spatial_dims():
    rng = np.random.default_rng(0)
    layer = ly.ConvTranspose2d(512, 256, 3, rng, stride=2, dtype=F64)
    x = Tensor(rng.normal(size=(1, 512, 4, 4)), dtype=F64)
    assert layer(x).shape == (1, 256, 8, 8)


def test_conv_transpose_identity_kernel_stride1():
    rng = np.random.default_rng(0)
    layer = ly.ConvTranspose2d(1, 1, 1, rng, stride=1, dtype=F64)
    layer.weight.data = np.ones((1, 1, 1, 1))
    layer.bias.data = np.zeros(1)
    x = Tensor(rng.normal(size=(2, 1, 6, 6)), dtype=F64)
    np.testing.assert_array_equal(layer(x).data, x.data)


def test_conv_transpose_gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    layer = ly.ConvTranspose2d(3, 2, 3, rng, stride=2, dtype=F64)
    layer.weight.data = rng.normal(0, 0.3, layer.weight.shape)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True, dtype=F64)
    err = grad_check(lambda: ad.mean(ad.square(layer(x))),
                     [x, layer.weight, layer.bias])
    assert err < 1e-6


def test_conv_then_transpose_restores_spatial_shape():
    rng = np.random.default_rng(1)
    down = ly.Conv2d(3, 8, 3, rng, stride=2, dtype=F64)
    up = ly.ConvTranspose2d(8, 3, 3, rng, stride=2, dtype=F64)
    x = Tensor(rng.normal(size=(2, 3, 16, 16)), dtype=F64)
    assert up(down(x)).shape == x.shape


def test_batch_norm_normalizes_training_batch():
    rng = np.random.default_rng(9)
    bn = ly.BatchNorm(5, dtype=F64)
    x = Tensor(rng.normal(3.0, 2.5, size=(64, 5, 4, 4)), dtype=F64)
    out = bn(x).data
    mean = out.mean(axis=(0, 2, 3))
    var = out.var(axis=(0, 2, 3))
    assert np.abs(mean).max() < 1e-5
    assert np.abs(var - 1).max() < 1e-4


def test_batch_norm_running_stats_update():
    bn = ly.BatchNorm(2, dtype=F64)
    x = Tensor(np.random.default_rng(0).normal(5.0, 1.0, (32, 2)), dtype=F64)
    bn(x)
    assert bn.running_mean.mean() > 0.4   # 0.9 * 0 + 0.1 * batch mean of ~5


def test_dense_matches_manual_affine():
    rng = np.random.default_rng(3)
    layer = ly.Dense(4, 2, rng, dtype=F64)
    x = rng.normal(size=(5, 4))
    out = layer(Tensor(x, dtype=F64))
    np.testing.assert_allclose(out.data, x @ layer.weight.data + layer.bias.data)


def test_weight_init_statistics():
    rng = np.random.default_rng(12)
    layer = ly.Dense(400, 300, rng)
    w = layer.weight.data
    assert abs(w.mean()) < 1e-3
    assert abs(w.std() - 0.01) < 1e-3
    assert np.all(layer.bias.data == 0)


def test_layer_spec_validation():
    with pytest.raises(ConfigError):
        ly.LayerSpec(kind="conv", in_features=0, out_features=4)
    with pytest.raises(ConfigError):
        ly.LayerSpec(kind="grl", grl_coeff=-1.0)
    with pytest.raises(ConfigError):
        ly.LayerSpec(kind="unknown-kind")
    spec = ly.LayerSpec(kind="conv", in_features=3, out_features=8, stride=2)
    layer = ly.build_layer(spec, np.random.default_rng(0))
    assert isinstance(layer, ly.Conv2d)


def test_even_kernel_with_stride2_rejected():
    with pytest.raises(ConfigError):
        ly.ConvTranspose2d(2, 2, 4, np.random.default_rng(0), stride=2)
