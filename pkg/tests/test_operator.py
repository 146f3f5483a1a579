"""Scripted operator: equilibrium, correction signs, determinism, and the
zero-delay closed-loop baseline envelope."""

import dataclasses

import numpy as np
import pytest

from ptgc_sim.config import OperatorConfig, VehicleConfig
from ptgc_sim.harness import ScenarioConfig, compute_run_metrics, run_episode
from ptgc_sim.operator_model import ScriptedOperator, operator_step
from ptgc_sim.vehicle import VehicleState


def _clean_params(**overrides) -> OperatorConfig:
    """Noise-free, lag-free, ramp-free operator for memoryless examples."""
    base = dict(reaction_tau_s=0.0, noise_std_steer=0.0, noise_std_throttle=0.0,
                noise_std_brake=0.0, speed_ramp_s=0.0, wander_amp_m=0.0,
                disturb_std_steer=0.0)
    base.update(overrides)
    return OperatorConfig(**base)


def _straight_state(track, v: float, offset: float = 0.0) -> VehicleState:
    s_mid = track.segments[0].length / 2.0
    x, y = track.point_at(s_mid, offset)
    _, _, theta = track.pose_at(s_mid)
    return VehicleState(x=x, y=y, v=v, theta=theta, wheel_angle=0.0)


def test_equilibrium_on_straight(track):
    params = _clean_params()
    vehicle = VehicleConfig()
    state = _straight_state(track, v=params.target_speed_base_mps)
    cmd = operator_step(state, track, params, dt=0.05, vehicle=vehicle)
    assert cmd.steer == pytest.approx(0.0, abs=1e-9)
    assert cmd.brake == 0.0
    # throttle roughly balances drag at the target speed
    drag_ff = vehicle.c_drag_per_s * params.target_speed_base_mps / vehicle.a_max_mps2
    assert cmd.throttle == pytest.approx(drag_ff, abs=0.05)


def test_left_offset_steers_right(track):
    params = _clean_params()
    state = _straight_state(track, v=params.target_speed_base_mps, offset=1.0)
    cmd = operator_step(state, track, params, dt=0.05)
    assert cmd.steer < 0.0


def test_memoryless_when_noise_and_lag_off(track):
    params = _clean_params()
    op = ScriptedOperator(params, VehicleConfig(), track)
    state = _straight_state(track, v=8.0, offset=0.5)
    first = op.step(state, dt=0.05)
    second = op.step(state, dt=0.05)
    assert first == second
    # and equals the convenience wrapper (fresh instance)
    assert operator_step(state, track, params, dt=0.05) == first


def test_determinism_with_noise(track):
    params = dataclasses.replace(OperatorConfig(), seed=7)
    vehicle = VehicleConfig()
    states = [_straight_state(track, v=5.0 + 0.1 * i, offset=0.2 * (i % 3))
              for i in range(20)]
    runs = []
    for _ in range(2):
        op = ScriptedOperator(params, vehicle, track)
        runs.append([op.step(s, dt=0.05) for s in states])
    assert runs[0] == runs[1]


def test_lost_operator_brakes(track):
    params = _clean_params()
    state = _straight_state(track, v=10.0, offset=5.0 * track.lane_half_width)
    cmd = operator_step(state, track, params, dt=0.05)
    assert cmd.brake == 1.0
    assert cmd.steer == 0.0


def test_reaction_lag_filters_commands(track):
    params = _clean_params(reaction_tau_s=0.5)
    op = ScriptedOperator(params, VehicleConfig(), track)
    state = _straight_state(track, v=10.0, offset=2.0)
    first = op.step(state, dt=0.05)
    raw = operator_step(state, track, _clean_params(), dt=0.05)
    # the lagged response starts well short of the memoryless command
    assert 0.0 < abs(first.steer) < abs(raw.steer)


def test_zero_delay_dc_baseline(cfg, track):
    """Closed loop at zero delay completes the lap inside the envelope:
    max |e| < 0.5 m and mean speed above the 18 km/h validity floor."""
    scn = ScenarioConfig(mode="dc", delay_ms=0.0, seed=0)
    log = run_episode(cfg, scn, track=track)
    assert log.lap_complete
    assert np.max(np.abs(log.column("e_m"))) < 0.5
    metrics = compute_run_metrics(log, track)
    assert metrics.valid
    assert metrics.mean_speed > 5.0


@pytest.mark.slow
def test_dc_degrades_with_delay(cfg, track):
    """Median DC lateral deviation over seeds is non-decreasing across the
    delay protocol levels (the degradation the guidance loop must beat)."""
    levels = [200.0, 400.0, 600.0, 800.0, 1000.0]
    medians = []
    for delay in levels:
        d2cs = []
        for seed in (0, 1, 2):
            scn = ScenarioConfig(mode="dc", delay_ms=delay, seed=seed)
            log = run_episode(cfg, scn, track=track)
            d2cs.append(compute_run_metrics(log, track).d2c)
        medians.append(float(np.median(d2cs)))
    assert all(b >= a for a, b in zip(medians, medians[1:])), medians
