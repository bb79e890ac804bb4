import numpy as np
import pytest

from irdetect.engine import Adam, adam_step
from irdetect.errors import TrainingDivergedError


def reference_adam(w0, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Scalar reference: textbook bias-corrected Adam on one parameter."""
    w = float(w0)
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        w -= lr * m_hat / (v_hat ** 0.5 + eps)
    return w


def test_first_step_moves_by_learning_rate():
    params = {"w": np.array([1.0])}
    opt = Adam(params, learning_rate=1e-4)
    opt.step({"w": np.array([1.0])})
    # bias-corrected first step is -lr * g / (|g| + eps) ~= -lr * sign(g)
    assert params["w"][0] == pytest.approx(1.0 - 1e-4, abs=1e-8)
    assert opt.step_count == 1


def test_zero_gradient_leaves_weights_but_decays_moments():
    params = {"w": np.array([2.0])}
    opt = Adam(params, learning_rate=0.1)
    opt.step({"w": np.array([1.0])})
    opt.m["w"][:] = 0.5
    opt.v["w"][:] = 0.25
    before = params["w"].copy()
    opt.step({"w": np.array([0.0])})
    assert params["w"][0] != before[0]  # momentum still carries
    assert opt.m["w"][0] == pytest.approx(0.45)
    assert opt.v["w"][0] == pytest.approx(0.25 * 0.999)

    params2 = {"w": np.array([2.0])}
    opt2 = Adam(params2, learning_rate=0.1)
    opt2.step({"w": np.array([0.0])})
    assert params2["w"][0] == 2.0  # zero gradient from a cold start: no motion


def test_two_steps_match_scalar_reference():
    params = {"w": np.array([0.3], dtype=np.float64)}
    opt = Adam(params, learning_rate=1e-2)
    for _ in range(2):
        adam_step(opt, {"w": np.array([0.7], dtype=np.float64)})
    expected = reference_adam(0.3, [0.7, 0.7], lr=1e-2)
    assert abs(params["w"][0] - expected) < 1e-7


def test_first_update_sign_pattern_is_learning_rate_invariant():
    rng = np.random.default_rng(9)
    g = rng.standard_normal(32)
    g[np.abs(g) < 1e-3] = 1.0  # keep signs unambiguous
    deltas = []
    for lr in (1e-4, 5e-3):
        params = {"w": np.zeros(32)}
        Adam(params, learning_rate=lr).step({"w": g.copy()})
        deltas.append(params["w"].copy())
    assert np.all(np.sign(deltas[0]) == np.sign(deltas[1]))
    assert np.all(np.sign(deltas[0]) == -np.sign(g))


def test_non_finite_gradient_raises():
    opt = Adam({"w": np.array([1.0])})
    with pytest.raises(TrainingDivergedError, match="w"):
        opt.step({"w": np.array([np.nan])})


def test_rejects_non_positive_learning_rate():
    with pytest.raises(ValueError):
        Adam({"w": np.array([1.0])}, learning_rate=0.0)
