"""Deterministic teleoperation simulator with predicted-trajectory guidance
control: delay emulation, intended-trajectory prediction, Stanley tracking."""

from .config import GlobalConfig, ConfigError, load_config
from .vehicle import ControlCommand, VehicleState, step_vehicle
from .track import Track, build_test_track, project_to_centerline
from .delay import DelayChannel, TimestampedMessage, estimate_round_trip
from .bev import BevImage, rasterize
from .model import CandidateSet, TrajectoryPredictor, load_model, save_model
from .tracker import GuidanceTrajectory, stanley_steering, truncate_guidance, tracking_error
from .harness import RunLog, RunMetrics, ScenarioConfig, run_episode, compute_run_metrics

__all__ = [
    "GlobalConfig", "ConfigError", "load_config",
    "ControlCommand", "VehicleState", "step_vehicle",
    "Track", "build_test_track", "project_to_centerline",
    "DelayChannel", "TimestampedMessage", "estimate_round_trip",
    "BevImage", "rasterize",
    "CandidateSet", "TrajectoryPredictor", "load_model", "save_model",
    "GuidanceTrajectory", "stanley_steering", "truncate_guidance", "tracking_error",
    "RunLog", "RunMetrics", "ScenarioConfig", "run_episode", "compute_run_metrics",
]
