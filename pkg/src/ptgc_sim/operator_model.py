"""Scripted teleoperator: pure-pursuit steering toward a centerline preview
point, first-order command lag, curvature-aware speed regulation, optional
seeded noise. Replaces a human driver in the closed loop."""

from __future__ import annotations

import math

import numpy as np

from .config import OperatorConfig, VehicleConfig
from .track import Track, project_to_centerline
from .vehicle import ControlCommand, VehicleState, wrap_angle


class ScriptedOperator:
    """One instance per episode; holds the lag filter state and the RNG."""

    def __init__(self, params: OperatorConfig, vehicle: VehicleConfig, track: Track):
        self.params = params
        self.vehicle = vehicle
        self.track = track
        self.rng = np.random.default_rng(params.seed)
        self._lagged = ControlCommand(0.0, 0.0, 0.0)
        self._elapsed = 0.0
        self._wander_offset = 0.0
        self._wander_timer = 0.0
        self._disturb = 0.0

    def step(self, delayed_state: VehicleState, dt: float) -> ControlCommand:
        p = self.params
        self._elapsed += dt
        s, e, _ = project_to_centerline(self.track, (delayed_state.x, delayed_state.y))

        # lost-operator behavior: far off the road, brake hard and hold straight
        if abs(e) > 4.0 * self.track.lane_half_width:
            self._lagged = ControlCommand(0.0, 0.0, 1.0)
            return self._lagged

        if p.wander_amp_m > 0.0 and p.wander_dwell_s > 0.0:
            self._wander_timer -= dt
            if self._wander_timer <= 0.0:
                self._wander_offset = float(self.rng.uniform(-p.wander_amp_m, p.wander_amp_m))
                self._wander_timer = float(self.rng.uniform(0.6, 1.4)) * p.wander_dwell_s

        lookahead = max(delayed_state.v * p.preview_time_s, p.min_lookahead_m)
        gx, gy = self.track.point_at(s + lookahead, self._wander_offset)

        # pure pursuit in the (delayed) vehicle frame
        c, sn = math.cos(delayed_state.theta), math.sin(delayed_state.theta)
        dx, dy = gx - delayed_state.x, gy - delayed_state.y
        local_x = c * dx + sn * dy
        local_y = -sn * dx + c * dy
        d2 = max(local_x * local_x + local_y * local_y, 1e-6)
        kappa_cmd = 2.0 * local_y / d2
        wheel = math.atan(self.vehicle.wheelbase_m * kappa_cmd) * p.steering_gain
        steer = wheel / self.vehicle.wheel_angle_max_rad

        # speed target slows down with the curvature at the preview point
        kappa_prev = abs(self.track.curvature_at(s + lookahead))
        v_target = p.target_speed_base_mps / (1.0 + p.curvature_slowdown_gain * kappa_prev)
        if p.speed_ramp_s > 0.0:
            v_target *= min(1.0, self._elapsed / p.speed_ramp_s)
        v_err = v_target - delayed_state.v
        if v_err >= 0.0:
            drag_ff = self.vehicle.c_drag_per_s * v_target / self.vehicle.a_max_mps2
            throttle = drag_ff + p.speed_kp * v_err
            brake = 0.0
        else:
            throttle = 0.0
            brake = p.brake_kp * (-v_err)

        if p.disturb_std_steer > 0.0 and p.disturb_corr_s > 0.0:
            rho = math.exp(-dt / p.disturb_corr_s)
            sigma = p.disturb_std_steer * math.sqrt(1.0 - rho * rho)
            self._disturb = rho * self._disturb + sigma * self.rng.standard_normal()
            steer += self._disturb

        raw = ControlCommand(steer, throttle, brake)
        if p.noise_std_steer or p.noise_std_throttle or p.noise_std_brake:
            raw = ControlCommand(
                raw.steer + p.noise_std_steer * self.rng.standard_normal(),
                raw.throttle + p.noise_std_throttle * self.rng.standard_normal(),
                raw.brake + p.noise_std_brake * self.rng.standard_normal(),
            )
        raw = raw.clamped()

        if p.reaction_tau_s <= 0.0:
            self._lagged = raw
        else:
            a = dt / (p.reaction_tau_s + dt)
            prev = self._lagged
            self._lagged = ControlCommand(
                prev.steer + a * (raw.steer - prev.steer),
                prev.throttle + a * (raw.throttle - prev.throttle),
                prev.brake + a * (raw.brake - prev.brake),
            ).clamped()
        return self._lagged


def operator_step(delayed_state: VehicleState, track: Track, params: OperatorConfig,
                  dt: float, vehicle: VehicleConfig | None = None) -> ControlCommand:
    """Memoryless convenience wrapper (fresh operator, no lag history)."""
    op = ScriptedOperator(params, vehicle or VehicleConfig(), track)
    return op.step(delayed_state, dt)


def wrap_heading_error(theta_target: float, theta: float) -> float:
    return wrap_angle(theta_target - theta)
