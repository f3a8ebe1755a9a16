import numpy as np
import pytest

from crisisfuse.kernel import (
    Parameter,
    Rng,
    dense,
    dropout,
    finite_diff_grad,
    glorot_uniform,
    gradient_check,
    relative_errors,
    relu,
    self_attention,
    sgd_step,
    sigmoid,
    softmax_cross_entropy,
)


def test_dense_known_value():
    w = Parameter("w", [[2.0], [3.0]])
    b = Parameter("b", [1.0])
    y, _ = dense(np.array([1.0, 1.0]), w, b)
    assert y.shape == (1,)
    assert y[0] == 6.0


def test_dense_shape_mismatch_raises():
    w = Parameter("w", np.zeros((3, 2)))
    b = Parameter("b", np.zeros(2))
    with pytest.raises(ValueError, match="shape"):
        dense(np.zeros(4), w, b)


def test_dense_gradient_matches_finite_differences():
    rng = Rng(7)
    w = Parameter("w", rng.normal(size=(3, 4)))
    b = Parameter("b", rng.normal(size=4))
    x = rng.normal(size=3)

    def loss():
        y, _ = dense(x, w, b)
        return float(np.sum(y))

    def backprop():
        y, back = dense(x, w, b)
        back(np.ones_like(y))

    report = gradient_check(loss, backprop, [w, b], eps=1e-6, floor=1e-8)
    assert max(report.values()) < 1e-6


def test_relu_subgradient_zero_at_kink():
    y, back = relu(np.array([-1.0, 0.0, 2.0]))
    assert np.array_equal(y, [0.0, 0.0, 2.0])
    g = back(np.array([1.0, 1.0, 1.0]))
    assert np.array_equal(g, [0.0, 0.0, 1.0])


def test_sigmoid_midpoint_and_derivative():
    y, back = sigmoid(np.array([0.0]))
    assert y[0] == 0.5
    # derivative at 0 is exactly 1/4; compare against central differences
    eps = 1e-5
    hi, _ = sigmoid(np.array([eps]))
    lo, _ = sigmoid(np.array([-eps]))
    fd = (hi[0] - lo[0]) / (2 * eps)
    bp = back(np.array([1.0]))[0]
    assert abs(bp - 0.25) < 1e-12
    assert abs(fd - bp) < 1e-8


def test_sigmoid_extremes_stay_in_open_interval():
    y, _ = sigmoid(np.array([50.0, -50.0]))
    assert 0.0 < y[1] < y[0] < 1.0


def test_softmax_ce_uniform_logits():
    loss, _ = softmax_cross_entropy(np.zeros(3), 0)
    assert abs(loss - np.log(3.0)) < 1e-15


def test_softmax_ce_confident_correct():
    loss, _ = softmax_cross_entropy(np.array([10.0, 0.0]), 0)
    assert abs(loss - np.log1p(np.exp(-10.0))) < 1e-15


def test_softmax_ce_large_logits_finite():
    loss, back = softmax_cross_entropy(np.array([1000.0, 0.0]), 1)
    assert np.isfinite(loss)
    assert np.all(np.isfinite(back()))


def test_softmax_ce_nonnegative_random():
    rng = Rng(3)
    for _ in range(200):
        n = int(rng.integers(2, 8))
        logits = rng.normal(size=n) * 5
        label = int(rng.integers(0, n))
        loss, _ = softmax_cross_entropy(logits, label)
        assert loss >= 0.0


def test_softmax_ce_bad_label():
    with pytest.raises(IndexError):
        softmax_cross_entropy(np.zeros(3), 3)


def test_softmax_ce_gradient_matches_finite_differences():
    rng = Rng(11)
    logits = Parameter("logits", rng.normal(size=5))

    def loss():
        l, _ = softmax_cross_entropy(logits.value, 2)
        return l

    def backprop():
        _, back = softmax_cross_entropy(logits.value, 2)
        logits.grad += back()

    report = gradient_check(loss, backprop, [logits], eps=1e-6, floor=1e-8)
    assert report["logits"] < 1e-7


def test_dropout_eval_is_exact_identity():
    rng = Rng(0)
    x = rng.normal(size=64)
    y, back = dropout(x, 0.5, rng, training=False)
    assert np.array_equal(x, y)
    assert np.array_equal(back(x), x)


def test_dropout_rate_zero_identity_in_training():
    rng = Rng(0)
    x = rng.normal(size=64)
    y, _ = dropout(x, 0.0, rng, training=True)
    assert np.array_equal(x, y)


def test_dropout_zero_fraction_and_scaling():
    rng = Rng(42)
    x = np.ones(100_000)
    y, _ = dropout(x, 0.5, rng, training=True)
    zero_frac = np.mean(y == 0.0)
    assert abs(zero_frac - 0.5) < 0.01
    kept = y[y != 0.0]
    assert np.allclose(kept, 2.0)


def test_dropout_invalid_rate():
    with pytest.raises(ValueError):
        dropout(np.ones(3), 1.0, Rng(0), training=True)
    with pytest.raises(ValueError):
        dropout(np.ones(3), -0.1, Rng(0), training=True)


def test_self_attention_zero_weights_halves_input():
    x = np.array([2.0, -4.0, 6.0])
    w = Parameter("w", np.zeros((3, 3)))
    b = Parameter("b", np.zeros(3))
    y, _ = self_attention(x, w, b)
    assert np.array_equal(y, 0.5 * x)


def test_self_attention_zero_input_zero_output():
    rng = Rng(5)
    w = Parameter("w", rng.normal(size=(4, 4)))
    b = Parameter("b", rng.normal(size=4))
    y, _ = self_attention(np.zeros(4), w, b)
    assert np.array_equal(y, np.zeros(4))


def test_self_attention_gradient_matches_finite_differences():
    rng = Rng(9)
    w = Parameter("w", rng.normal(size=(4, 4)) * 0.5)
    b = Parameter("b", rng.normal(size=4) * 0.5)
    x = rng.normal(size=4)
    coeff = rng.normal(size=4)

    def loss():
        y, _ = self_attention(x, w, b)
        return float(coeff @ y)

    def backprop():
        _, back = self_attention(x, w, b)
        back(coeff)

    report = gradient_check(loss, backprop, [w, b], eps=1e-6)
    assert max(report.values()) < 1e-6


def test_sgd_two_steps_quadratic():
    # f(w) = w^2 from w=1 with lr 0.1: 1 -> 0.8 -> 0.64
    w = Parameter("w", np.array([1.0]))
    for _ in range(2):
        w.grad += 2.0 * w.value
        sgd_step([w], 0.1)
    assert abs(w.value[0] - 0.64) < 1e-15
    assert w.grad[0] == 0.0


def test_finite_diff_quadratic():
    w = Parameter("w", np.array([3.0]))
    (g,) = finite_diff_grad(lambda: float(w.value[0] ** 2), [w], eps=1e-6)
    assert abs(g[0] - 6.0) < 1e-6


def test_finite_diff_constant_function():
    w = Parameter("w", np.array([1.0, -2.0]))
    (g,) = finite_diff_grad(lambda: 5.0, [w], eps=1e-6)
    assert np.array_equal(g, np.zeros(2))


def test_finite_diff_restores_values():
    w = Parameter("w", np.array([0.3, -1.7]))
    before = w.value.copy()
    finite_diff_grad(lambda: float(np.sum(w.value ** 2)), [w])
    assert np.array_equal(w.value, before)


def test_gradient_check_catches_corrupted_backward():
    rng = Rng(13)
    w = Parameter("w", rng.normal(size=(3, 2)))
    b = Parameter("b", rng.normal(size=2))
    x = rng.normal(size=3)

    def loss():
        y, _ = dense(x, w, b)
        return float(np.sum(y * y))

    def bad_backprop():
        y, back = dense(x, w, b)
        back(2.0 * y)
        w.grad *= 1.01  # deliberately wrong by 1%

    report = gradient_check(loss, bad_backprop, [w, b], eps=1e-6)
    assert report["w"] > 1e-4


def test_relative_errors_floor():
    fd = np.array([0.0, 1.0])
    bp = np.array([1e-9, 1.0])
    err = relative_errors(fd, bp, floor=1e-3)
    assert err[0] < 1e-5
    assert err[1] == 0.0


def test_rng_same_seed_same_stream():
    a = Rng(123).normal(size=10)
    b = Rng(123).normal(size=10)
    assert np.array_equal(a, b)


def test_rng_derive_stable_and_independent():
    r = Rng(7)
    a1 = r.derive("dropout").random(5)
    a2 = Rng(7).derive("dropout").random(5)
    b = Rng(7).derive("shuffle").random(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)


def test_rng_derive_does_not_advance_parent():
    r = Rng(7)
    r.derive("x")
    r.derive("y")
    fresh = Rng(7)
    assert np.array_equal(r.random(4), fresh.random(4))


def test_glorot_bound():
    rng = Rng(1)
    w = glorot_uniform((30, 50), rng)
    bound = np.sqrt(6.0 / 80.0)
    assert np.max(np.abs(w)) <= bound
    assert np.max(np.abs(w)) > 0.5 * bound  # actually fills the range
