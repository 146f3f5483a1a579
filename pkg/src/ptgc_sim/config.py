"""Global configuration: dataclass sections, JSON loading, strict key checking."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    """Raised for unknown keys or values violating module preconditions."""


@dataclass
class SimConfig:
    dt_s: float = 0.05              # control/sensor tick (20 Hz)
    max_sim_time_s: float = 240.0   # episode timeout


@dataclass
class TrackConfig:
    # Closed loop built as a rounded convex polygon: one arc per corner,
    # straights in between, uniform edge length solved for the target length.
    arc_radii_m: list[float] = field(default_factory=lambda: [17.0, 22.0, 28.0, 33.0, 40.0, 45.0])
    turn_angles_deg: list[float] = field(default_factory=lambda: [60.0] * 6)
    target_length_m: float = 622.0
    lane_half_width_m: float = 7.0  # half of the full two-way four-lane road


@dataclass
class VehicleConfig:
    wheelbase_m: float = 2.8
    wheel_angle_max_rad: float = 0.6
    steer_slew_rad_s: float = 1.2
    a_max_mps2: float = 3.0
    b_max_mps2: float = 6.0
    c_drag_per_s: float = 0.05


@dataclass
class OperatorConfig:
    preview_time_s: float = 1.2
    min_lookahead_m: float = 5.0
    reaction_tau_s: float = 0.15
    steering_gain: float = 1.0
    target_speed_base_mps: float = 10.0
    # target speed ramps in over the first seconds of an episode (drivers do
    # not floor the pedal from standstill); also gives the delayed loop time
    # to settle before full speed
    speed_ramp_s: float = 4.0
    curvature_slowdown_gain: float = 8.0
    speed_kp: float = 0.5
    brake_kp: float = 0.4
    noise_std_steer: float = 0.01
    noise_std_throttle: float = 0.02
    noise_std_brake: float = 0.0
    # random piecewise-constant offset target from the centerline (lane-change
    # style wander); zero amplitude disables it
    wander_amp_m: float = 0.0
    wander_dwell_s: float = 3.0
    # correlated steering disturbance (AR(1)); the operator corrects it through
    # feedback like any other perturbation. Zero std disables it.
    disturb_std_steer: float = 0.0
    disturb_corr_s: float = 0.7
    seed: int = 0


@dataclass
class DelayConfig:
    uplink_ms: float = 0.0
    downlink_ms: float = 0.0
    jitter_ms: float = 0.0  # hook only; paper protocol uses fixed levels


@dataclass
class SensorConfig:
    range_m: float = 18.0
    ground_points: int = 1500
    edge_points: int = 600
    edge_z_min_m: float = 0.3
    edge_z_max_m: float = 2.0
    edge_jitter_m: float = 0.15


@dataclass
class BevConfig:
    extent_m: float = 32.0
    grid_side: int = 256
    ground_z_max_m: float = 0.2
    height_max_m: float = 5.0


@dataclass
class PredConfig:
    history_steps: int = 20   # past window is history_steps + 1 samples
    horizon_steps: int = 20
    num_modes: int = 3
    dt_pred_s: float = 0.1
    alpha: float = 1.0
    hidden_size: int = 128
    context_dim: int = 512
    embed_size: int = 32
    decoder_hidden: int = 256
    base_channels: int = 16
    huber_smoothing: bool = False  # smoothed regression variant, off by default
    huber_delta_m: float = 1.0
    # kinematic constants for the command-rollout baseline inside the model
    wheelbase_m: float = 2.8
    wheel_angle_max_rad: float = 0.6
    steer_slew_rad_s: float = 1.2
    # the learned residual is zero until ramp_start and fades in over ramp:
    # the near future is almost pure kinematics, so the head is reserved for
    # the longer-range intent where it has signal
    residual_ramp_start_s: float = 0.4
    residual_ramp_s: float = 0.8


@dataclass
class TrainConfig:
    lr: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0


@dataclass
class TrackerConfig:
    k: float = 1.0
    v_min_mps: float = 0.5
    # the tracker steers against a prediction made at least this long ago,
    # re-truncated by (delay + age) every control tick. A fresh prediction
    # passes through the vehicle's own pose and carries no lateral error
    # signal; holding it briefly turns drift into a measurable offset.
    guidance_hold_s: float = 0.4
    # delay-scheduled gain: the effective Stanley gain is
    # k / (1 + (t_d / tau)^2) because the guidance split error grows with the
    # prediction depth, which grows with the round-trip delay. Zero disables
    # the schedule (constant gain).
    delay_gain_tau_s: float = 0.0


@dataclass
class ExperimentConfig:
    delay_levels_ms: list[float] = field(default_factory=lambda: [0.0, 200.0, 400.0, 600.0, 800.0, 1000.0])
    repeats: int = 3
    seeds: list[int] = field(default_factory=lambda: [0])
    workers: int = 1


@dataclass
class GlobalConfig:
    sim: SimConfig = field(default_factory=SimConfig)
    track: TrackConfig = field(default_factory=TrackConfig)
    vehicle: VehicleConfig = field(default_factory=VehicleConfig)
    operator: OperatorConfig = field(default_factory=OperatorConfig)
    delay: DelayConfig = field(default_factory=DelayConfig)
    sensor: SensorConfig = field(default_factory=SensorConfig)
    bev: BevConfig = field(default_factory=BevConfig)
    pred: PredConfig = field(default_factory=PredConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def _apply_section(section: Any, values: dict[str, Any], prefix: str) -> None:
    known = {f.name for f in fields(section)}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {prefix}.{key}")
        current = getattr(section, key)
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"config key {prefix}.{key} expects a boolean")
        elif isinstance(current, int) and isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"config key {prefix}.{key} expects an integer")
        setattr(section, key, type(current)(value) if not isinstance(current, list) else list(value))


def config_from_dict(data: dict[str, Any]) -> GlobalConfig:
    cfg = GlobalConfig()
    sections = {f.name: getattr(cfg, f.name) for f in fields(cfg)}
    for name, values in data.items():
        if name not in sections:
            raise ConfigError(f"unknown config section {name!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        _apply_section(sections[name], values, name)
    return cfg


def load_config(path: str | Path) -> GlobalConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed config JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    return config_from_dict(data)


def iter_config_keys(cfg: GlobalConfig | None = None):
    """Yield (dotted_key, default_value) for every documented config key."""
    cfg = cfg or GlobalConfig()
    for sec_field in fields(cfg):
        section = getattr(cfg, sec_field.name)
        for f in fields(section):
            yield f"{sec_field.name}.{f.name}", getattr(section, f.name)
