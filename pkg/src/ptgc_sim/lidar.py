"""Synthetic LiDAR: samples road-surface and road-edge points around the vehicle.

Stands in for a raycast scanner; the predictor only needs drivable-area
geometry, so points are drawn directly from the track surface.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SensorConfig
from .track import Track
from .vehicle import VehicleState


@dataclass
class PointCloud:
    points: np.ndarray       # (n, 3) float64, vehicle frame (px forward, py left, pz up)
    ground_flag: np.ndarray  # (n,) bool


def _world_to_vehicle(xy: np.ndarray, state: VehicleState) -> np.ndarray:
    c, s = math.cos(state.theta), math.sin(state.theta)
    dx = xy[:, 0] - state.x
    dy = xy[:, 1] - state.y
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def synth_point_cloud(track: Track, state: VehicleState, params: SensorConfig,
                      seed: int) -> PointCloud:
    """Deterministic synthetic scan: ground points on the road surface (pz = 0)
    and non-ground points along the road edges, all within params.range_m."""
    rng = np.random.default_rng(seed)
    s0, _, _ = _nearest_s(track, state)
    hw = track.lane_half_width
    rng_m = params.range_m

    # ground points: uniform over (s, lateral) strip around the vehicle
    s_g = s0 + rng.uniform(-rng_m, rng_m, params.ground_points)
    e_g = rng.uniform(-hw, hw, params.ground_points)
    ground_xy = track.points_at(s_g, e_g)
    ground_z = np.zeros(params.ground_points)

    # edge points: both road borders, raised to berm height
    n_edge = params.edge_points
    s_e = s0 + rng.uniform(-rng_m, rng_m, n_edge)
    side = np.where(rng.uniform(size=n_edge) < 0.5, -1.0, 1.0)
    e_e = side * (hw + rng.uniform(0.0, params.edge_jitter_m, n_edge))
    edge_xy = track.points_at(s_e, e_e) if n_edge else np.empty((0, 2))
    edge_z = rng.uniform(params.edge_z_min_m, params.edge_z_max_m, n_edge)

    xy = np.vstack([ground_xy, edge_xy]) if n_edge else ground_xy
    z = np.concatenate([ground_z, edge_z])
    flags = np.concatenate([np.ones(params.ground_points, bool), np.zeros(n_edge, bool)])

    local = _world_to_vehicle(xy, state)
    keep = np.hypot(local[:, 0], local[:, 1]) <= rng_m
    pts = np.column_stack([local[keep], z[keep]])
    return PointCloud(points=pts, ground_flag=flags[keep])


def _nearest_s(track: Track, state: VehicleState) -> tuple[float, float, float]:
    from .track import project_to_centerline

    return project_to_centerline(track, (state.x, state.y))
