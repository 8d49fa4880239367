import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hapticfusion.errors import InvalidArgumentError
from hapticfusion.numerics import (
    AdamState,
    adam_step,
    cross_entropy,
    dense_backward,
    dense_forward,
    finite_diff_check,
    softmax,
    softmax_cross_entropy,
)


# frozen from an mpmath evaluation at 40 digits
SOFTMAX_123 = [0.090030573170380458, 0.24472847105479765, 0.66524095577482189]


def test_softmax_uniform_for_equal_logits():
    npt.assert_allclose(softmax(np.zeros(3)), np.full(3, 1 / 3), atol=1e-15)


def test_softmax_large_logits_do_not_overflow():
    p = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p))
    assert p[0] == pytest.approx(1.0)
    assert p[1] == pytest.approx(0.0, abs=1e-300)


def test_softmax_reference_values():
    npt.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), SOFTMAX_123, atol=1e-5)
    npt.assert_allclose(softmax(np.array([1.0, 2.0, 3.0])), SOFTMAX_123, rtol=1e-14)


def test_softmax_rejects_empty():
    with pytest.raises(InvalidArgumentError):
        softmax(np.array([]))


logit_vectors = arrays(
    np.float64,
    st.integers(1, 40),
    elements=st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False),
)


@given(logit_vectors)
def test_softmax_sums_to_one(z):
    p = softmax(z)
    assert np.all(p >= 0)
    assert abs(p.sum() - 1.0) <= 1e-9


@given(
    arrays(np.float64, st.integers(1, 20), elements=st.floats(-50, 50)),
    st.floats(-1e3, 1e3),
)
def test_softmax_shift_invariance(z, c):
    npt.assert_allclose(softmax(z + c), softmax(z), atol=1e-12, rtol=0)


def test_cross_entropy_examples():
    assert cross_entropy(np.eye(4)[2], 2) == 0.0
    assert cross_entropy(np.full(36, 1 / 36), 17) == pytest.approx(math.log(36), abs=1e-4)
    loss = cross_entropy(np.array([1.0, 0.0]), 1)
    assert math.isfinite(loss)
    assert loss == pytest.approx(27.631021115928548, rel=1e-12)


def test_cross_entropy_label_out_of_range():
    with pytest.raises(InvalidArgumentError):
        cross_entropy(np.full(3, 1 / 3), 3)
    with pytest.raises(InvalidArgumentError):
        cross_entropy(np.full(3, 1 / 3), -1)


def test_fused_softmax_ce_matches_unfused():
    rng = np.random.default_rng(0)
    logits = rng.normal(size=(5, 4))
    labels = np.array([0, 3, 1, 1, 2])
    loss, dlogits, probs = softmax_cross_entropy(logits, labels)
    expected = np.mean([cross_entropy(softmax(z), y) for z, y in zip(logits, labels)])
    assert loss == pytest.approx(expected, rel=1e-12)
    npt.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)
    assert dlogits.shape == logits.shape


# -- Adam ---------------------------------------------------------------------

def _textbook_adam_scalar(w, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t in range(1, steps + 1):
        g = 2.0 * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w


@pytest.mark.parametrize("g", [3.7, -0.02, 1e3])
def test_adam_first_step_is_lr_times_sign(g):
    params = {"w": np.array([0.5])}
    state = AdamState.zeros_like(params)
    lr = 1e-3
    new, new_state = adam_step(params, {"w": np.array([g])}, state, lr)
    delta = new["w"][0] - 0.5
    assert abs(delta + lr * np.sign(g)) < 1e-6 * lr
    assert new_state.step_count == 1


def test_adam_zero_gradient_leaves_params():
    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.ones(4)}
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    new, _ = adam_step(params, grads, AdamState.zeros_like(params), 0.1)
    for k in params:
        npt.assert_array_equal(new[k], params[k])


def test_adam_minimises_quadratic_like_textbook_oracle():
    params = {"w": np.array([1.0])}
    state = AdamState.zeros_like(params)
    for _ in range(100):
        params, state = adam_step(params, {"w": 2.0 * params["w"]}, state, 0.1)
    oracle = _textbook_adam_scalar(1.0, 100, 0.1)
    assert abs(params["w"][0]) < 0.1
    assert params["w"][0] == pytest.approx(oracle, abs=1e-12)
    assert state.step_count == 100


def test_adam_shape_mismatch():
    params = {"w": np.zeros(3)}
    with pytest.raises(InvalidArgumentError):
        adam_step(params, {"w": np.zeros(4)}, AdamState.zeros_like(params), 0.1)


def test_adam_is_pure_and_deterministic():
    rng = np.random.default_rng(3)
    params = {"w": rng.normal(size=(3, 2))}
    grads = {"w": rng.normal(size=(3, 2))}
    state = AdamState.zeros_like(params)
    before = params["w"].copy()
    a, sa = adam_step(params, grads, state, 0.01)
    b, sb = adam_step(params, grads, state, 0.01)
    npt.assert_array_equal(params["w"], before)
    assert a["w"].tobytes() == b["w"].tobytes()
    assert sa.first_moment["w"].tobytes() == sb.first_moment["w"].tobytes()
    assert state.step_count == 0


# -- finite differences -------------------------------------------------------

def test_fd_check_exact_quadratic():
    w = np.array([3.0])
    err = finite_diff_check(lambda p: float(np.sum(p**2)), 2 * w, w)
    assert err < 1e-8


def _dense_ce_loss(params, x, labels):
    loss, _, _ = softmax_cross_entropy(dense_forward(x, params["w"], params["b"]), labels)
    return loss


@pytest.mark.parametrize("seed", range(5))
def test_fd_check_dense_softmax_ce(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 3))
    labels = rng.integers(0, 5, size=4)
    params = {"w": rng.normal(size=(3, 5)), "b": rng.normal(size=5)}
    _, dlogits, _ = softmax_cross_entropy(dense_forward(x, params["w"], params["b"]), labels)
    _, dw, db = dense_backward(x, params["w"], dlogits)
    err = finite_diff_check(lambda p: _dense_ce_loss(p, x, labels), {"w": dw, "b": db}, params)
    assert err < 1e-4


@pytest.mark.parametrize("seed", range(3))
def test_fd_check_dense_input_gradient(seed):
    rng = np.random.default_rng(seed)
    w, b = rng.normal(size=(3, 2)), rng.normal(size=2)
    labels = np.array([1, 0, 1, 1])

    def loss(x):
        return softmax_cross_entropy(dense_forward(x, w, b), labels)[0]

    x = rng.normal(size=(4, 3))
    _, dlogits, _ = softmax_cross_entropy(dense_forward(x, w, b), labels)
    dx, _, _ = dense_backward(x, w, dlogits)
    assert finite_diff_check(loss, dx, x) < 1e-4


def test_fd_check_detects_scaled_gradient():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    labels = np.array([0, 1, 2, 1])
    params = {"w": rng.normal(size=(3, 3)), "b": rng.normal(size=3)}
    _, dlogits, _ = softmax_cross_entropy(dense_forward(x, params["w"], params["b"]), labels)
    _, dw, db = dense_backward(x, params["w"], dlogits)
    err = finite_diff_check(lambda p: _dense_ce_loss(p, x, labels), {"w": 2 * dw, "b": 2 * db}, params)
    assert err == pytest.approx(0.5, abs=1e-4)


@settings(max_examples=25)
@given(st.integers(0, 2**31 - 1))
def test_fd_check_dense_random_seeds(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 2))
    labels = rng.integers(0, 3, size=3)
    params = {"w": rng.normal(size=(2, 3)), "b": rng.normal(size=3)}
    _, dlogits, _ = softmax_cross_entropy(dense_forward(x, params["w"], params["b"]), labels)
    _, dw, db = dense_backward(x, params["w"], dlogits)
    assert finite_diff_check(lambda p: _dense_ce_loss(p, x, labels), {"w": dw, "b": db}, params) < 1e-4
