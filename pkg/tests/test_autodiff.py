"""Tape, primitives and gradient checking."""

import numpy as np
import pytest

from aimkit import autodiff as ad
from aimkit.autodiff import Tape, Tensor, grad_check
from aimkit.errors import NumericError, PrecisionError, UsageError

F64 = np.float64


def tensor(data, grad=True):
    return Tensor(np.asarray(data, dtype=F64), requires_grad=grad)


def test_relu_forward_values():
    out = ad.relu(tensor([-1.0, 0.0, 2.0]))
    assert out.data.tolist() == [0.0, 0.0, 2.0]


def test_scaled_sigmoid_zero_is_zero():
    out = ad.scaled_sigmoid(tensor([0.0]))
    assert out.data[0] == 0.0


def test_identity_kernel_conv_preserves_image():
    rng = np.random.default_rng(0)
    img = Tensor(rng.normal(size=(2, 1, 5, 5)), dtype=F64)
    kernel = Tensor(np.ones((1, 1, 1, 1)), dtype=F64)
    out = ad.conv2d(img, kernel)
    np.testing.assert_array_equal(out.data, img.data)


def test_backward_sum_of_squares():
    x = tensor([1.0, 2.0])
    with Tape() as tape:
        loss = ad.sum_(ad.square(x))
        tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2.0, 4.0])


def test_backward_mean_spreads_gradient():
    x = tensor([1.0, 5.0, -2.0, 0.5])
    with Tape() as tape:
        tape.backward(ad.mean(x))
    np.testing.assert_array_equal(x.grad, [0.25] * 4)


def test_fanout_accumulates():
    x = tensor([3.0])
    with Tape() as tape:
        tape.backward(ad.add(x, x))
    np.testing.assert_array_equal(x.grad, [2.0])


def test_softmax_log_pipeline_matches_finite_differences():
    rng = np.random.default_rng(7)
    x = tensor(rng.normal(size=7))

    def f():
        return ad.sum_(ad.log(ad.clamp_min(ad.softmax(x), 1e-12)))

    assert grad_check(f, x, eps=1e-5) < 1e-6


def test_grad_check_tanh():
    rng = np.random.default_rng(1)
    x = tensor(rng.normal(size=12))
    assert grad_check(lambda: ad.sum_(ad.tanh(x)), x) < 1e-6


def test_grad_check_constant_graph():
    x = tensor([1.0, 2.0])
    c = Tensor(np.asarray([4.0]), dtype=F64)
    err = grad_check(lambda: ad.sum_(ad.multiply(c, c)), x)
    assert err == 0.0


def test_grad_check_rejects_float32():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(PrecisionError):
        grad_check(lambda: ad.sum_(x), x)


def test_grad_check_rejects_bad_eps():
    x = tensor([1.0])
    with pytest.raises(UsageError):
        grad_check(lambda: ad.sum_(x), x, eps=1e-2)


def test_backward_on_empty_tape_is_an_error():
    with Tape() as tape:
        pass
    with pytest.raises(UsageError):
        tape.backward(tensor([1.0]))


def test_backward_requires_scalar_loss():
    x = tensor([1.0, 2.0])
    with Tape() as tape:
        y = ad.square(x)
        with pytest.raises(UsageError):
            tape.backward(y)


def test_mixed_precision_rejected():
    a = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    b = Tensor(np.ones(3, dtype=np.float64))
    with pytest.raises(UsageError):
        ad.add(a, b)


def test_debug_mode_flags_nonfinite():
    x = tensor([1.0, 0.0])
    with Tape(debug=True):
        with pytest.raises(NumericError):
            ad.divide(tensor([1.0, 1.0]), x)


def test_gradients_accumulate_across_backward_calls():
    x = tensor([2.0])
    with Tape() as tape:
        y = ad.square(x)
        tape.backward(y)
        tape.backward(y)
    np.testing.assert_array_equal(x.grad, [8.0])


def test_broadcast_gradients_reduce_to_operand_shape():
    a = tensor(np.ones((3, 4)))
    b = tensor(np.ones(4))

    def f():
        return ad.sum_(ad.multiply(a, b))

    assert grad_check(f, [a, b]) < 1e-8
    a.zero_grad()
    b.zero_grad()
    with Tape() as tape:
        tape.backward(ad.sum_(ad.multiply(a, b)))
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, [3.0] * 4)


def test_slice_backward_scatters():
    x = tensor(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        tape.backward(ad.sum_(x[:, 1:]))
    np.testing.assert_array_equal(x.grad, [[0, 1, 1], [0, 1, 1]])


def test_concat_roundtrip_gradient():
    a = tensor(np.ones((2, 2)))
    b = tensor(np.full((3, 2), 2.0))
    with Tape() as tape:
        tape.backward(ad.sum_(ad.multiply(ad.concat([a, b], axis=0),
                                          ad.concat([a, b], axis=0))))
    np.testing.assert_array_equal(a.grad, np.full((2, 2), 2.0))
    np.testing.assert_array_equal(b.grad, np.full((3, 2), 4.0))


def test_conv2d_shape_mismatch_names_primitive():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Tensor(np.zeros((3, 5, 3, 3)))
    with pytest.raises(Exception, match="conv2d"):
        ad.conv2d(x, w)


def test_matmul_shape_mismatch_names_primitive():
    with pytest.raises(Exception, match="matmul"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


@pytest.mark.parametrize("op,args", [
    ("add", 2), ("subtract", 2), ("multiply", 2), ("divide", 2),
    ("relu", 1), ("leaky_relu", 1), ("sigmoid", 1), ("tanh", 1),
    ("scaled_sigmoid", 1), ("softmax", 1), ("square", 1),
])
def test_chain_rule_exactness_on_random_inputs(op, args):
    """Analytic vs central differences within 1e-6 over 100 random draws."""
    rng = np.random.default_rng(hash(op) % 2 ** 31)
    fn = getattr(ad, op)
    worst = 0.0
    for _ in range(100):
        xs = [Tensor(rng.normal(size=4), requires_grad=True, dtype=F64)
              for _ in range(args)]
        if op == "divide":
            xs[1] = Tensor(rng.uniform(0.5, 2.0, 4), requires_grad=True, dtype=F64)
        worst = max(worst, grad_check(lambda: ad.sum_(ad.square(fn(*xs))), xs))
    assert worst < 1e-6


def test_forward_backward_deterministic():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.normal(size=(4, 6)), requires_grad=True, dtype=F64)
        w = Tensor(rng.normal(size=(6, 3)), requires_grad=True, dtype=F64)
        with Tape() as tape:
            out = ad.mean(ad.square(ad.tanh(ad.matmul(x, w))))
            tape.backward(out)
        return out.data.copy(), x.grad.copy(), w.grad.copy()

    first, second = run(), run()
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_dropout_inverted_scaling():
    rng = np.random.default_rng(3)
    x = Tensor(np.ones((1000,)), dtype=F64)
    out = ad.dropout(x, 0.7, rng=rng, training=True)
    kept = out.data != 0
    assert abs(kept.mean() - 0.7) < 0.05
    np.testing.assert_allclose(out.data[kept], 1 / 0.7)


def test_dropout_identity_at_inference():
    x = Tensor(np.ones(10), dtype=F64)
    out = ad.dropout(x, 0.7, training=False)
    assert out is x


def test_batch_norm_inference_uses_running_stats():
    x = Tensor(np.random.default_rng(0).normal(2.0, 3.0, (8, 4)), dtype=F64)
    gamma = Tensor(np.ones(4), dtype=F64)
    beta = Tensor(np.zeros(4), dtype=F64)
    rm = np.full(4, 2.0)
    rv = np.full(4, 9.0)
    out = ad.batch_norm(x, gamma, beta, rm, rv, training=False)
    np.testing.assert_allclose(out.data, (x.data - 2.0) / np.sqrt(9.0 + 1e-5))
