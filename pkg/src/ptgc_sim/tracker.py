"""Guidance trajectory truncation and Stanley steering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vehicle import VehicleState, wrap_angle


class DelayExceedsHorizon(RuntimeError):
    """Round-trip delay is at or past the end of the prediction window."""


@dataclass
class GuidanceTrajectory:
    # (offset_s, x, y) rows, world frame; offsets strictly increasing from 0
    waypoints: np.ndarray
    source_tick: int
    valid_horizon: float

    def __post_init__(self) -> None:
        self.waypoints = np.asarray(self.waypoints, float)
        if len(self.waypoints) < 2:
            raise ValueError("guidance needs at least 2 waypoints")
        offs = self.waypoints[:, 0]
        if offs[0] != 0.0 or np.any(np.diff(offs) <= 0.0):
            raise ValueError("offsets must start at 0 and increase strictly")


def truncate_guidance(candidate: np.ndarray, anchor_pose: tuple[float, float, float],
                      t_d: float, dt_pred: float, source_tick: int = 0) -> GuidanceTrajectory:
    """Drop the stale first t_d seconds of an anchored prediction.

    candidate is the (T, 2) best candidate in the frame of the anchor pose
    recorded at prediction time; waypoint k sits at time offset k*dt_pred.
    The split point at exact offset t_d is linearly interpolated, becomes the
    new offset-0 waypoint, and everything is transformed to the world frame.
    """
    candidate = np.asarray(candidate, float)
    t_total = len(candidate) * dt_pred
    if t_d >= t_total:
        raise DelayExceedsHorizon(f"delay {t_d:.3f} s >= horizon {t_total:.3f} s")
    if t_d < 0.0:
        raise ValueError("delay must be non-negative")

    # offsets 0..T with the anchor origin prepended at offset 0
    pts = np.vstack([[0.0, 0.0], candidate])
    offs = np.arange(len(pts)) * dt_pred

    u = t_d / dt_pred
    i = int(math.floor(u))
    frac = u - i
    if frac == 0.0:
        split = pts[i]
        rest = pts[i + 1:]
        rest_offs = offs[i + 1:]
    else:
        split = (1.0 - frac) * pts[i] + frac * pts[i + 1]
        rest = pts[i + 1:]
        rest_offs = offs[i + 1:]

    local = np.vstack([split, rest])
    new_offs = np.concatenate([[0.0], rest_offs - t_d])

    ax, ay, ath = anchor_pose
    c, s = math.cos(ath), math.sin(ath)
    world_x = ax + c * local[:, 0] - s * local[:, 1]
    world_y = ay + s * local[:, 0] + c * local[:, 1]
    wps = np.column_stack([new_offs, world_x, world_y])
    return GuidanceTrajectory(waypoints=wps, source_tick=source_tick,
                              valid_horizon=t_total - t_d)


def tracking_error(state: VehicleState, guidance: GuidanceTrajectory) -> tuple[float, float]:
    """(e, theta_e) at the guidance split point.

    theta_p is the tangent from the first distinct waypoint pair; e is the
    signed distance from the tangent line, negative when the vehicle sits to
    the left of the guidance (so Stanley steers right to correct).
    """
    wps = guidance.waypoints
    px, py = wps[0, 1], wps[0, 2]
    qx = qy = None
    for row in wps[1:]:
        if abs(row[1] - px) > 1e-12 or abs(row[2] - py) > 1e-12:
            qx, qy = row[1], row[2]
            break
    if qx is None:
        raise ValueError("degenerate guidance: all waypoints coincide")
    theta_p = math.atan2(qy - py, qx - px)

    dx, dy = state.x - px, state.y - py
    left_of_path = math.cos(theta_p) * dy - math.sin(theta_p) * dx
    e = -left_of_path
    theta_e = wrap_angle(theta_p - state.theta)
    return e, theta_e


def stanley_steering(e: float, theta_e: float, v: float, k: float,
                     v_min: float = 0.5, wheel_angle_max: float = 0.6) -> float:
    """Stanley law: wheel angle = theta_e + arcsin(clamp(k*e / max(v, v_min))),
    saturated at the steering limit. Returns the wheel angle in rad."""
    if k <= 0.0:
        raise ValueError("gain k must be positive")
    arg = k * e / max(v, v_min)
    arg = min(1.0, max(-1.0, arg))
    delta = theta_e + math.asin(arg)
    return min(wheel_angle_max, max(-wheel_angle_max, delta))


def steering_command(delta: float, wheel_angle_max: float) -> float:
    """Normalized steer command from a (saturated) wheel angle."""
    return delta / wheel_angle_max
