"""Test track construction, closure, projection oracles, and arclength
consistency."""

import dataclasses
import math

import numpy as np
import pytest

from ptgc_sim.config import ConfigError, TrackConfig, VehicleConfig
from ptgc_sim.track import build_test_track, project_to_centerline
from ptgc_sim.vehicle import ControlCommand, VehicleState, step_vehicle


def test_default_track_length(track):
    assert 621.0 <= track.total_length <= 623.0
    assert track.total_length == pytest.approx(
        sum(seg.length for seg in track.segments))


def test_default_track_closes(track):
    pos_res, ang_res = track.closure_residual()
    assert pos_res < 1e-6
    assert ang_res < 1e-6


def test_radius_below_bound_rejected():
    spec = TrackConfig()
    spec.arc_radii_m = [10.0] + spec.arc_radii_m[1:]
    with pytest.raises(ConfigError):
        build_test_track(spec)


def test_open_polygon_rejected():
    spec = TrackConfig()
    spec.turn_angles_deg = [50.0] * 6  # sums to 300 degrees, not a closed loop
    with pytest.raises(ConfigError):
        build_test_track(spec)


def test_projection_on_centerline(track):
    point = track.point_at(100.0)
    s, e, theta_p = project_to_centerline(track, point)
    assert s == pytest.approx(100.0, abs=1e-9)
    assert e == pytest.approx(0.0, abs=1e-9)
    _, _, tangent = track.pose_at(100.0)
    assert theta_p == pytest.approx(tangent, abs=1e-9)


def test_projection_left_offset_sign(track):
    # the first segment is a straight; half a meter to the left of travel
    s_mid = track.segments[0].length / 2.0
    point = track.point_at(s_mid, 0.5)
    s, e, _ = project_to_centerline(track, point)
    assert s == pytest.approx(s_mid, abs=1e-9)
    assert e == pytest.approx(0.5, abs=1e-9)


def test_projection_matches_dense_sampling(track):
    # 1 mm brute-force sampling of the whole centerline as the oracle
    s_grid = np.arange(0.0, track.total_length, 0.001)
    grid_pts = track.points_at(s_grid, np.zeros_like(s_grid))
    rng = np.random.default_rng(7)
    # points near the arcs (every odd segment is an arc)
    for idx in range(1, len(track.segments), 2):
        s0 = track.cum_lengths[idx]
        for _ in range(3):
            s_true = s0 + rng.uniform(0.0, track.segments[idx].length)
            e_true = rng.uniform(-5.0, 5.0)
            point = track.point_at(s_true, e_true)
            s_proj, e_proj, _ = project_to_centerline(track, point)
            d2 = (grid_pts[:, 0] - point[0]) ** 2 + (grid_pts[:, 1] - point[1]) ** 2
            s_brute = s_grid[int(np.argmin(d2))]
            gap = abs(s_proj - s_brute)
            gap = min(gap, track.total_length - gap)
            assert gap < 0.002
            assert abs(e_proj) == pytest.approx(math.sqrt(float(d2.min())), abs=0.002)


def test_projection_roundtrip(track):
    rng = np.random.default_rng(3)
    for _ in range(50):
        s_true = float(rng.uniform(0.0, track.total_length))
        idx = None
        # classify the segment to pick the tolerance (straight vs arc)
        for i, seg in enumerate(track.segments):
            if track.cum_lengths[i] <= s_true < track.cum_lengths[i] + seg.length:
                idx = i
                break
        tol = 1e-9 if track.segments[idx].curvature == 0.0 else 1e-6
        point = track.point_at(s_true)
        s, e, theta_p = project_to_centerline(track, point)
        gap = abs(s - s_true)
        gap = min(gap, track.total_length - gap)
        assert gap < max(tol, 1e-9 * track.total_length) + tol
        assert abs(e) < tol
        _, _, tangent = track.pose_at(s_true)
        assert abs(math.remainder(theta_p - tangent, 2.0 * math.pi)) < 1e-6


def test_projection_rejects_non_finite(track):
    with pytest.raises(ValueError):
        project_to_centerline(track, (float("nan"), 0.0))


def test_arclength_consistency_driving_straight(track):
    # drive the first straight segment at constant speed; s advances by v*t
    params = VehicleConfig(c_drag_per_s=0.0)
    x0, y0, th0 = track.pose_at(5.0)
    state = VehicleState(x=x0, y=y0, v=8.0, theta=th0, wheel_angle=0.0)
    dt, steps = 0.05, 40  # 2 s, stays inside the first straight
    for _ in range(steps):
        state = step_vehicle(state, ControlCommand(0.0, 0.0, 0.0), dt, params)
    s, e, _ = project_to_centerline(track, (state.x, state.y))
    assert s == pytest.approx(5.0 + 8.0 * dt * steps, abs=1e-9)
    assert e == pytest.approx(0.0, abs=1e-9)


def test_pose_at_wraps_arclength(track):
    x1, y1, t1 = track.pose_at(10.0)
    x2, y2, t2 = track.pose_at(10.0 + track.total_length)
    assert (x1, y1) == pytest.approx((x2, y2), abs=1e-9)
    assert t1 == pytest.approx(t2, abs=1e-9)


def test_points_at_matches_point_at(track):
    rng = np.random.default_rng(11)
    s = rng.uniform(0.0, track.total_length, 64)
    e = rng.uniform(-7.0, 7.0, 64)
    batch = track.points_at(s, e)
    for i in range(len(s)):
        single = track.point_at(float(s[i]), float(e[i]))
        assert batch[i, 0] == pytest.approx(single[0], abs=1e-9)
        assert batch[i, 1] == pytest.approx(single[1], abs=1e-9)
