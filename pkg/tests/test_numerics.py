import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from routenas.numerics import (
    DimensionError,
    NumericError,
    Param,
    activation_backward,
    activation_forward,
    adam_step,
    dense_backward,
    dense_forward,
    glorot,
    grad_check,
    loss_backward,
    loss_forward,
    make_rng,
)

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


def test_dense_identity_and_hand_arithmetic():
    y = dense_forward(np.array([[1.0, 0.0]]), Param(np.eye(2)), Param(np.zeros((1, 2))))
    assert y.tolist() == [[1.0, 0.0]]
    y = dense_forward(np.array([[1.0, 1.0]]), Param(np.array([[2.0], [3.0]])), Param(np.array([[1.0]])))
    assert y.tolist() == [[6.0]]


def test_dense_matches_triple_loop():
    rng = make_rng(3)
    x = rng.normal(size=(3, 4))
    W = Param(rng.normal(size=(4, 5)))
    b = Param(rng.normal(size=(1, 5)))
    expected = np.zeros((3, 5))
    for i in range(3):
        for j in range(5):
            acc = b.value[0, j]
            for k in range(4):
                acc += x[i, k] * W.value[k, j]
            expected[i, j] = acc
    np.testing.assert_allclose(dense_forward(x, W, b), expected, rtol=0, atol=1e-12)


def test_dense_shape_mismatch():
    with pytest.raises(DimensionError):
        dense_forward(np.ones((2, 3)), Param(np.ones((4, 1))), Param(np.zeros((1, 1))))


def test_activation_examples():
    assert activation_forward(np.array([[-1.0, 2.0]]), "relu").tolist() == [[0.0, 2.0]]
    assert activation_forward(np.array([[0.0, 0.0]]), "softmax_rows").tolist() == [[0.5, 0.5]]
    assert activation_forward(np.array([[0.0]]), "sigmoid")[0, 0] == 0.5
    with pytest.raises(NumericError):
        activation_forward(np.array([[np.nan]]), "relu")


def test_sigmoid_extremes_stay_finite():
    y = activation_forward(np.array([[-1000.0, 1000.0]]), "sigmoid")
    assert np.all(np.isfinite(y)) and y[0, 0] >= 0 and y[0, 1] <= 1


@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 6)), elements=finite), finite)
def test_softmax_rows_sum_to_one_and_shift_invariant(x, c):
    s = activation_forward(x, "softmax_rows")
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(activation_forward(x + c, "softmax_rows"), s, atol=1e-9)


def test_loss_examples():
    assert loss_forward(np.array([[0.5]]), np.array([[1.0]]), "bce") == pytest.approx(math.log(2), abs=1e-12)
    y = np.array([[0.3], [1.2]])
    assert loss_forward(y, y.copy(), "mse") == 0.0


def test_bce_matches_per_element_sum():
    p = np.array([0.1, 0.4, 0.5, 0.8, 0.99])
    y = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
    total = 0.0
    for pi, yi in zip(p, y):
        total += -(yi * math.log(pi) + (1 - yi) * math.log(1 - pi))
    assert loss_forward(p[:, None], y[:, None], "bce") == pytest.approx(total / 5, abs=1e-12)


def test_bce_clamps():
    assert np.isfinite(loss_forward(np.array([[0.0], [1.0]]), np.array([[1.0], [0.0]]), "bce"))


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        loss_forward(np.zeros((3, 1)), np.zeros((2, 1)), "mse")


def test_adam_first_step_unit_grad():
    p = Param(np.zeros((2, 3)))
    p.grad[...] = 1.0
    adam_step(p, lr=0.01)
    np.testing.assert_allclose(p.value, -0.01 / (1 + 1e-8), rtol=0, atol=1e-15)
    assert p.step_count == 1 and not p.grad.any()


def test_adam_zero_grad_is_identity():
    p = Param(np.array([[1.5, -2.0]]))
    before = p.value.copy()
    for _ in range(3):
        adam_step(p, lr=0.1)
    np.testing.assert_array_equal(p.value, before)


def test_adam_three_steps_match_unrolled_recurrence():
    grads = [0.3, -1.2, 0.7]
    lr, b1, b2, eps, wd = 0.05, 0.9, 0.999, 1e-8, 0.01
    p = Param(np.array([[2.0]]))
    for g in grads:
        p.grad[0, 0] = g
        adam_step(p, lr, b1, b2, eps, wd)
    # hand-unrolled
    w, m, v = 2.0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        w = w - lr * wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    assert p.value[0, 0] == pytest.approx(w, abs=1e-12)


def test_adam_rejects_nonfinite_grad():
    p = Param(np.zeros((1, 1)))
    p.grad[0, 0] = np.inf
    with pytest.raises(NumericError):
        adam_step(p, 0.1)


def test_grad_check_quadratic():
    p = Param(make_rng(0).normal(size=(3, 2)))
    p.grad[...] = 2 * p.value
    assert grad_check(lambda: float((p.value**2).sum()), [p]) < 1e-7


def test_grad_check_detects_wrong_gradient():
    p = Param(np.ones((1, 2)))
    p.grad[...] = 0.0
    assert grad_check(lambda: float((p.value**2).sum()), [p]) > 0.5


@pytest.mark.parametrize("act", ["relu", "sigmoid", "identity"])
@pytest.mark.parametrize("loss", ["mse", "bce"])
def test_dense_activation_loss_gradients(act, loss):
    rng = make_rng(11)
    x = rng.normal(size=(6, 3))
    W, b = glorot(3, 1, rng), Param(rng.normal(size=(1, 1)) * 0.1)
    y = rng.integers(0, 2, size=(6, 1)).astype(float)
    out_act = "sigmoid" if loss == "bce" else act

    def f():
        return loss_forward(activation_forward(dense_forward(x, W, b), out_act), y, loss)

    z = dense_forward(x, W, b)
    a = activation_forward(z, out_act)
    dz = activation_backward(z, a, loss_backward(a, y, loss), out_act)
    dense_backward(x, W, b, dz)
    assert grad_check(f, [W, b]) < 1e-4


def test_softmax_backward_matches_finite_differences():
    rng = make_rng(2)
    P = Param(rng.normal(size=(3, 4)))
    weights = rng.normal(size=(3, 4))

    def f():
        return float((activation_forward(P.value, "softmax_rows") * weights).sum())

    y = activation_forward(P.value, "softmax_rows")
    P.grad[...] = activation_backward(P.value, y, weights, "softmax_rows")
    assert grad_check(f, [P]) < 1e-4


def test_rng_streams_repeat():
    a = make_rng(42).random(5)
    b = make_rng(42).random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(make_rng(42, 1).random(5), a)
