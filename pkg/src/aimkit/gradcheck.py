"""Finite-difference verification of every primitive, layer and loss.

All checks run in 64-bit mode on small random inputs and report the max
relative error between the analytic gradient and central differences.
The gradient reversal layer flips and scales its backward pass by design,
so its entry is checked against the matching -coeff * finite-difference
reference instead of the raw one.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import layers as ly
from . import losses as lo
from .autodiff import Tensor, grad_check

F64 = np.float64


def _t(rng, *shape, scale=1.0, requires_grad=True):
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=requires_grad, dtype=F64)


def _probs(rng, n, k):
    raw = rng.uniform(0.05, 1.0, (n, k))
    return Tensor(raw / raw.sum(axis=1, keepdims=True), requires_grad=True, dtype=F64)


def primitive_checks(rng) -> dict:
    checks = {}
    a = _t(rng, 3, 4)
    b = _t(rng, 3, 4, scale=0.8)
    c = Tensor(rng.uniform(0.5, 1.5, (3, 4)), requires_grad=True, dtype=F64)
    m1 = _t(rng, 3, 5)
    m2 = _t(rng, 5, 2)

    checks["add"] = (lambda: ad.mean(ad.square(ad.add(a, b))), [a, b])
    checks["subtract"] = (lambda: ad.mean(ad.square(ad.subtract(a, b))), [a, b])
    checks["multiply"] = (lambda: ad.mean(ad.square(ad.multiply(a, b))), [a, b])
    checks["divide"] = (lambda: ad.mean(ad.square(ad.divide(a, c))), [a, c])
    checks["matmul"] = (lambda: ad.mean(ad.square(ad.matmul(m1, m2))), [m1, m2])
    checks["leaky_relu"] = (lambda: ad.mean(ad.square(ad.leaky_relu(a, 0.2))), [a])
    checks["relu"] = (lambda: ad.mean(ad.square(ad.relu(ad.add(a, b)))), [a])
    checks["sigmoid"] = (lambda: ad.mean(ad.square(ad.sigmoid(a))), [a])
    checks["tanh"] = (lambda: ad.sum_(ad.tanh(a)), [a])
    checks["scaled_sigmoid"] = (lambda: ad.mean(ad.square(ad.scaled_sigmoid(a))), [a])
    checks["softmax"] = (lambda: ad.mean(ad.square(ad.softmax(a, axis=1))), [a])
    checks["log"] = (lambda: ad.mean(ad.log(c)), [c])
    checks["square"] = (lambda: ad.mean(ad.square(a)), [a])
    checks["sum"] = (lambda: ad.sum_(ad.multiply(a, a)), [a])
    checks["mean_axis"] = (lambda: ad.sum_(ad.square(ad.mean(a, axis=0))), [a])
    checks["reshape"] = (lambda: ad.mean(ad.square(ad.reshape(a, (4, 3)))), [a])
    checks["concat"] = (lambda: ad.mean(ad.square(ad.concat([a, b], axis=1))), [a, b])
    checks["slice"] = (lambda: ad.mean(ad.square(a[1:, :2])), [a])

    x = _t(rng, 2, 3, 6, 6, scale=0.7)
    w = _t(rng, 4, 3, 3, 3, scale=0.4)
    bias = _t(rng, 4, scale=0.2)
    checks["conv2d"] = (
        lambda: ad.mean(ad.square(ad.conv2d(x, w, bias, stride=2, padding=1))), [x, w, bias])
    xt = _t(rng, 2, 3, 4, 4, scale=0.7)
    wt = _t(rng, 3, 2, 3, 3, scale=0.4)
    bt = _t(rng, 2, scale=0.2)
    checks["conv_transpose2d"] = (
        lambda: ad.mean(ad.square(ad.conv_transpose2d(
            xt, wt, bt, stride=2, padding=1, output_padding=1))), [xt, wt, bt])

    xb = _t(rng, 6, 3, 4, 4)
    gamma = Tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True, dtype=F64)
    beta = _t(rng, 3, scale=0.3)
    checks["batch_norm"] = (
        lambda: ad.mean(ad.square(ad.batch_norm(xb, gamma, beta, training=True))),
        [xb, gamma, beta])

    xd = _t(rng, 4, 5)
    drop_mask = (rng.random((4, 5)) < 0.7).astype(F64)
    checks["dropout"] = (
        lambda: ad.mean(ad.square(ad.dropout(xd, 0.7, mask=drop_mask))), [xd])
    return checks


def layer_checks(rng) -> dict:
    checks = {}
    dense = ly.Dense(5, 3, rng, dtype=F64)
    xdense = _t(rng, 4, 5)
    checks["layer/dense"] = (
        lambda: ad.mean(ad.square(dense(xdense))),
        [xdense, dense.weight, dense.bias])

    conv = ly.Conv2d(3, 4, 3, rng, stride=2, dtype=F64)
    conv.weight.data = rng.normal(0.0, 0.3, conv.weight.shape)
    xc = _t(rng, 2, 3, 6, 6)
    checks["layer/conv"] = (
        lambda: ad.mean(ad.square(conv(xc))), [xc, conv.weight, conv.bias])

    deconv = ly.ConvTranspose2d(3, 2, 3, rng, stride=2, dtype=F64)
    deconv.weight.data = rng.normal(0.0, 0.3, deconv.weight.shape)
    xdc = _t(rng, 2, 3, 4, 4)
    checks["layer/conv_transpose"] = (
        lambda: ad.mean(ad.square(deconv(xdc))), [xdc, deconv.weight, deconv.bias])

    bn = ly.BatchNorm(3, dtype=F64)
    bn.gamma.data = rng.uniform(0.5, 1.5, 3)
    xbn = _t(rng, 5, 3, 4, 4)
    checks["layer/batch_norm"] = (
        lambda: ad.mean(ad.square(bn(xbn))), [xbn, bn.gamma, bn.beta])
    return checks


def grl_check(rng, coeff: float = 0.1) -> float:
    """The reversal layer is identity forward, so its analytic gradient is
    compared against -coeff times the finite-difference reference."""
    grl = ly.GradReversal(coeff)
    x = _t(rng, 8)
    return grad_check(lambda: ad.mean(ad.square(grl(x))), x,
                      reference_scale=-coeff)


def loss_checks(rng) -> dict:
    n, ids = 3, 5
    checks = {}
    dom = _probs(rng, n, 7)
    dom_labels = rng.integers(0, 7, n)
    checks["loss/cad"] = (lambda: lo.loss_cad(dom, dom_labels), [dom])

    reg = _probs(rng, n, 7)
    checks["loss/cer"] = (lambda: lo.loss_cer(reg), [reg])

    prior_s = Tensor(rng.uniform(0.1, 0.9, (n, 1)), requires_grad=True, dtype=F64)
    enc_s = Tensor(rng.uniform(0.1, 0.9, (n, 1)), requires_grad=True, dtype=F64)
    checks["loss/adv1"] = (lambda: lo.loss_adv1(prior_s, enc_s).d_loss, [prior_s, enc_s])

    logits = _t(rng, n, ids)
    id_labels = rng.integers(0, ids, n)
    checks["loss/ip"] = (lambda: lo.loss_ip(logits, id_labels), [logits])

    fake_s = Tensor(rng.uniform(0.1, 0.9, (8, 1)), requires_grad=True, dtype=F64)
    real_s = Tensor(rng.uniform(0.1, 0.9, (8, 1)), requires_grad=True, dtype=F64)
    checks["loss/adv2"] = (lambda: lo.loss_adv2(fake_s, real_s).d_loss, [fake_s, real_s])

    est_f = Tensor(rng.uniform(-0.9, 0.9, (n, 7)), requires_grad=True, dtype=F64)
    est_r = Tensor(rng.uniform(-0.9, 0.9, (n, 7)), requires_grad=True, dtype=F64)
    codes = rng.choice([-1.0, 1.0], (n, 7))
    checks["loss/ae"] = (lambda: lo.loss_ae(est_f, est_r, codes), [est_f, est_r])

    xhat = _t(rng, 2, 3, 5, 5, scale=0.5)
    xin = Tensor(rng.normal(0.0, 0.5, (2, 3, 5, 5)), dtype=F64)
    checks["loss/mc"] = (lambda: lo.loss_mc(xhat, xin), [xhat])
    checks["loss/tv"] = (lambda: lo.loss_tv(xhat), [xhat])

    att = Tensor(rng.uniform(0.05, 0.95, (2, 1, 5, 5)), requires_grad=True, dtype=F64)
    checks["loss/att"] = (lambda: lo.loss_att(att), [att])
    return checks


def run_suite(seed: int = 0, eps: float = 1e-5) -> dict:
    """All checks; returns name -> max relative error."""
    rng = np.random.default_rng(seed)
    results = {}
    for name, (fn, tensors) in {**primitive_checks(rng), **layer_checks(rng),
                                **loss_checks(rng)}.items():
        results[name] = grad_check(fn, tensors, eps=eps)
    results["layer/grl"] = grl_check(rng)
    return results
