"""CTRA baseline: closed-form arc oracle, straight-line and stationary limits,
rate estimation."""

import math

import numpy as np
import pytest

from ptgc_sim.ctra import (OMEGA_EPS, ctra_predict, ctra_propagate,
                           estimate_rates)


def _history(v0: float, omega: float, accel: float, n: int = 6,
             dt: float = 0.1) -> np.ndarray:
    """Anchored state history ending at the origin with heading 0, generated
    from the exact constant-turn-rate-and-acceleration kinematics."""
    rows = []
    for i in range(n):
        t = -(n - 1 - i) * dt  # ... -0.2, -0.1, 0.0
        theta = omega * t
        v = v0 + accel * t
        if abs(omega) < 1e-12:
            x = v0 * t + 0.5 * accel * t * t
            y = 0.0
        else:
            x = (v * math.sin(theta)) / omega + accel * (math.cos(theta) - 1.0) / omega ** 2
            y = (-v * math.cos(theta) + v0) / omega + accel * math.sin(theta) / omega ** 2
        rows.append([x, y, v, theta])
    return np.asarray(rows)


def _quadrature_oracle(v0, omega, accel, horizon, dt_pred, n_quad=200_001):
    """Independent fine trapezoid quadrature of the CTRA kinematics."""
    out = np.zeros((horizon, 2))
    for k in range(1, horizon + 1):
        t = np.linspace(0.0, k * dt_pred, n_quad)
        v = v0 + accel * t
        out[k - 1, 0] = np.trapezoid(v * np.cos(omega * t), t)
        out[k - 1, 1] = np.trapezoid(v * np.sin(omega * t), t)
    return out


def test_stationary_history():
    hist = np.zeros((6, 4))
    traj = ctra_predict(hist, horizon=10, dt_pred=0.1)
    assert np.all(traj == 0.0)


def test_straight_line_limit():
    hist = _history(10.0, 0.0, 0.0)
    traj = ctra_predict(hist, horizon=10, dt_pred=0.1, dt_hist=0.1)
    for k in range(1, 11):
        assert traj[k - 1, 0] == pytest.approx(k * 0.1 * 10.0, abs=1e-9)
        assert traj[k - 1, 1] == pytest.approx(0.0, abs=1e-9)


def test_circular_arc_oracle():
    # v=10, omega=0.5, a=0: waypoint at t=1 s is (R sin wt, R (1 - cos wt)), R=20
    traj = ctra_propagate(10.0, 0.5, 0.0, horizon=10, dt_pred=0.1)
    assert traj[9, 0] == pytest.approx(20.0 * math.sin(0.5), abs=1e-6)
    assert traj[9, 1] == pytest.approx(20.0 * (1.0 - math.cos(0.5)), abs=1e-6)
    assert traj[9] == pytest.approx([9.589, 2.448], abs=1e-3)


def test_randomized_closed_form_equivalence():
    """Propagation matches independent quadrature within 1e-6 m across random
    (v, omega, a), including omega = 0 exactly."""
    rng = np.random.default_rng(0)
    cases = [(10.0, 0.0, 0.0), (5.0, 0.0, 1.5)]
    for _ in range(10):
        cases.append((float(rng.uniform(1.0, 20.0)),
                      float(rng.uniform(-0.8, 0.8)),
                      float(rng.uniform(-1.5, 1.5))))
    for v0, omega, accel in cases:
        if 0.0 < abs(omega) < 2.0 * OMEGA_EPS:
            omega = 2.0 * OMEGA_EPS  # stay clear of the straight-line switch
        got = ctra_propagate(v0, omega, accel, horizon=5, dt_pred=0.2)
        want = _quadrature_oracle(v0, omega, accel, horizon=5, dt_pred=0.2)
        assert np.max(np.abs(got - want)) < 1e-6


def test_small_omega_uses_straight_limit():
    a = ctra_propagate(10.0, 0.5 * OMEGA_EPS, 0.0, horizon=10, dt_pred=0.1)
    b = ctra_propagate(10.0, 0.0, 0.0, horizon=10, dt_pred=0.1)
    assert np.array_equal(a, b)


def test_estimate_rates_recovers_constants():
    hist = _history(8.0, 0.3, 0.7, n=8, dt=0.1)
    omega, accel = estimate_rates(hist, dt_hist=0.1)
    assert omega == pytest.approx(0.3, abs=1e-9)
    assert accel == pytest.approx(0.7, abs=1e-9)


def test_prediction_from_history_matches_propagation():
    hist = _history(12.0, -0.4, 0.5)
    got = ctra_predict(hist, horizon=8, dt_pred=0.1, dt_hist=0.1)
    want = ctra_propagate(12.0, -0.4, 0.5, horizon=8, dt_pred=0.1)
    assert np.allclose(got, want, atol=1e-9)


def test_too_short_history_rejected():
    with pytest.raises(ValueError):
        ctra_predict(np.zeros((2, 4)), horizon=5, dt_pred=0.1)
