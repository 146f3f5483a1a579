"""Kinematic bicycle vehicle with bounded steering slew and affine longitudinal model."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .config import VehicleConfig


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    v: float            # m/s, >= 0
    theta: float        # rad, wrapped to (-pi, pi]
    wheel_angle: float  # rad, current front-wheel angle


@dataclass(frozen=True)
class ControlCommand:
    steer: float     # normalized, [-1, 1]
    throttle: float  # [0, 1]
    brake: float     # [0, 1]

    def clamped(self) -> "ControlCommand":
        return ControlCommand(
            steer=min(1.0, max(-1.0, self.steer)),
            throttle=min(1.0, max(0.0, self.throttle)),
            brake=min(1.0, max(0.0, self.brake)),
        )


class SimulationFault(RuntimeError):
    """Non-finite state reached; indicates a simulation bug, not a config issue."""


def step_vehicle(state: VehicleState, cmd: ControlCommand, dt: float,
                 params: VehicleConfig) -> VehicleState:
    """Explicit-Euler kinematic bicycle update over one tick.

    Positive steer turns left (heading increases). The front wheel slews
    toward steer * wheel_angle_max at a bounded rate.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    cmd = cmd.clamped()

    target_wheel = cmd.steer * params.wheel_angle_max_rad
    max_delta = params.steer_slew_rad_s * dt
    wheel = state.wheel_angle + min(max_delta, max(-max_delta, target_wheel - state.wheel_angle))
    wheel = min(params.wheel_angle_max_rad, max(-params.wheel_angle_max_rad, wheel))

    accel = (params.a_max_mps2 * cmd.throttle
             - params.b_max_mps2 * cmd.brake
             - params.c_drag_per_s * state.v)
    v_next = max(0.0, state.v + accel * dt)

    x = state.x + state.v * math.cos(state.theta) * dt
    y = state.y + state.v * math.sin(state.theta) * dt
    theta = wrap_angle(state.theta + state.v * math.tan(wheel) / params.wheelbase_m * dt)

    new = VehicleState(x=x, y=y, v=v_next, theta=theta, wheel_angle=wheel)
    if not all(math.isfinite(f) for f in (new.x, new.y, new.v, new.theta, new.wheel_angle)):
        raise SimulationFault(f"non-finite vehicle state: {new}")
    return new
