"""Constant turn rate and acceleration (CTRA) baseline predictor."""

from __future__ import annotations

import math

import numpy as np

OMEGA_EPS = 1e-4
STATIONARY_EPS = 1e-6


def _rate_fit(times: np.ndarray, values: np.ndarray) -> float:
    """Least-squares slope of values over times."""
    if len(times) < 2:
        return 0.0
    t = times - times.mean()
    denom = float(t @ t)
    if denom == 0.0:
        return 0.0
    return float(t @ (values - values.mean()) / denom)


def estimate_rates(states: np.ndarray, dt_hist: float, fit_window_s: float = 0.5) -> tuple[float, float]:
    """(yaw rate, acceleration) from the tail of a (n, 4) state history
    with columns (x, y, v, theta)."""
    n_fit = max(2, int(round(fit_window_s / dt_hist)) + 1)
    tail = states[-n_fit:]
    times = np.arange(len(tail)) * dt_hist
    theta = np.unwrap(tail[:, 3])
    omega = _rate_fit(times, theta)
    accel = _rate_fit(times, tail[:, 2])
    return omega, accel


def ctra_propagate(v0: float, omega: float, accel: float, horizon: int,
                   dt_pred: float) -> np.ndarray:
    """Closed-form CTRA rollout from the origin with heading 0.

    Returns (horizon, 2) waypoints at times k*dt_pred, k = 1..horizon.
    |omega| below OMEGA_EPS uses the straight-line limit.
    """
    out = np.zeros((horizon, 2))
    if abs(v0) < STATIONARY_EPS and abs(accel) < STATIONARY_EPS:
        return out
    for k in range(1, horizon + 1):
        t = k * dt_pred
        if abs(omega) < OMEGA_EPS:
            out[k - 1, 0] = v0 * t + 0.5 * accel * t * t
            out[k - 1, 1] = 0.0
        else:
            vt = v0 + accel * t
            th = omega * t
            out[k - 1, 0] = (vt * math.sin(th)) / omega + accel * (math.cos(th) - 1.0) / (omega * omega)
            out[k - 1, 1] = (-vt * math.cos(th) + v0) / omega + accel * math.sin(th) / (omega * omega)
    return out


def ctra_predict(states: np.ndarray, horizon: int, dt_pred: float,
                 dt_hist: float | None = None) -> np.ndarray:
    """Predict (horizon, 2) waypoints from a (n, 4) anchored state history.

    The history must be expressed in the frame of its newest state (origin,
    heading 0) and needs at least 3 samples to finite-difference the rates.
    """
    states = np.asarray(states, float)
    if states.ndim != 2 or states.shape[1] != 4 or len(states) < 3:
        raise ValueError("history must be (n>=3, 4) of (x, y, v, theta)")
    dt_hist = dt_pred if dt_hist is None else dt_hist
    omega, accel = estimate_rates(states, dt_hist)
    return ctra_propagate(float(states[-1, 2]), omega, accel, horizon, dt_pred)
