"""Closed test track: straight/arc chain, centerline queries, nearest-point projection.

The loop is a rounded convex polygon: one arc per corner, straights on the
edges. Edge lengths are solved (minimum-norm least squares) so the polygon
closes exactly and the centerline hits the target length.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, TrackConfig
from .vehicle import wrap_angle

RADIUS_MIN_M = 17.0
RADIUS_MAX_M = 45.0


@dataclass(frozen=True)
class Segment:
    length: float
    curvature: float  # 1/m, 0 for straights, signed (+ = left)


def _advance(pose: tuple[float, float, float], seg: Segment, ds: float) -> tuple[float, float, float]:
    x, y, theta = pose
    if seg.curvature == 0.0:
        return (x + ds * math.cos(theta), y + ds * math.sin(theta), theta)
    k = seg.curvature
    theta2 = theta + k * ds
    x2 = x + (math.sin(theta2) - math.sin(theta)) / k
    y2 = y - (math.cos(theta2) - math.cos(theta)) / k
    return (x2, y2, theta2)


@dataclass
class Track:
    segments: list[Segment]
    total_length: float
    lane_half_width: float
    # start pose (x, y, theta) of each segment plus the closing pose at the end
    poses: list[tuple[float, float, float]] = field(default_factory=list)
    cum_lengths: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.poses:
            pose = (0.0, 0.0, 0.0)
            self.poses = [pose]
            self.cum_lengths = [0.0]
            for seg in self.segments:
                pose = _advance(pose, seg, seg.length)
                self.poses.append(pose)
                self.cum_lengths.append(self.cum_lengths[-1] + seg.length)

    def closure_residual(self) -> tuple[float, float]:
        """(position residual m, heading residual rad) between end and start pose."""
        x0, y0, t0 = self.poses[0]
        x1, y1, t1 = self.poses[-1]
        return math.hypot(x1 - x0, y1 - y0), abs(wrap_angle(t1 - t0))

    def _segment_index(self, s: float) -> tuple[int, float]:
        s = s % self.total_length
        idx = bisect.bisect_right(self.cum_lengths, s) - 1
        idx = min(idx, len(self.segments) - 1)
        return idx, s - self.cum_lengths[idx]

    def pose_at(self, s: float) -> tuple[float, float, float]:
        idx, ds = self._segment_index(s)
        x, y, theta = _advance(self.poses[idx], self.segments[idx], ds)
        return x, y, wrap_angle(theta)

    def curvature_at(self, s: float) -> float:
        idx, _ = self._segment_index(s)
        return self.segments[idx].curvature

    def point_at(self, s: float, e: float = 0.0) -> tuple[float, float]:
        """World point at arclength s, offset e to the left of travel."""
        x, y, theta = self.pose_at(s)
        return (x - e * math.sin(theta), y + e * math.cos(theta))

    def points_at(self, s: np.ndarray, e: np.ndarray) -> np.ndarray:
        """Vectorized point_at: (n,) arclengths and offsets to (n, 2) points."""
        s = np.asarray(s, float) % self.total_length
        e = np.asarray(e, float)
        cum = np.asarray(self.cum_lengths)
        idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(self.segments) - 1)
        ds = s - cum[idx]
        poses = np.asarray(self.poses)
        x0, y0, th0 = poses[idx, 0], poses[idx, 1], poses[idx, 2]
        k = np.asarray([seg.curvature for seg in self.segments])[idx]
        straight = k == 0.0
        theta = np.where(straight, th0, th0 + k * ds)
        k_safe = np.where(straight, 1.0, k)
        x = np.where(straight, x0 + ds * np.cos(th0),
                     x0 + (np.sin(theta) - np.sin(th0)) / k_safe)
        y = np.where(straight, y0 + ds * np.sin(th0),
                     y0 - (np.cos(theta) - np.cos(th0)) / k_safe)
        return np.column_stack([x - e * np.sin(theta), y + e * np.cos(theta)])


def build_test_track(spec: TrackConfig) -> Track:
    """Build the closed-loop test road from the corner radii and turn angles."""
    radii = [float(r) for r in spec.arc_radii_m]
    angles = [math.radians(a) for a in spec.turn_angles_deg]
    if len(radii) != 6 or len(angles) != 6:
        raise ConfigError("test track needs exactly six corners")
    for r in radii:
        if not (RADIUS_MIN_M <= r <= RADIUS_MAX_M):
            raise ConfigError(f"corner radius {r} m outside [{RADIUS_MIN_M}, {RADIUS_MAX_M}] m")
    if any(a <= 0.0 for a in angles):
        raise ConfigError("turn angles must be positive")
    if abs(sum(angles) - 2.0 * math.pi) > 1e-9:
        raise ConfigError("turn angles must sum to 360 degrees for a closed loop")

    n = len(radii)
    tangent_off = [r * math.tan(a / 2.0) for r, a in zip(radii, angles)]
    arc_total = sum(r * a for r, a in zip(radii, angles))
    perimeter = spec.target_length_m + 2.0 * sum(tangent_off) - arc_total
    if perimeter <= 0.0:
        raise ConfigError("target length too short for the requested corners")

    # Edge headings around the polygon; closure gives 3 linear constraints on
    # the edge lengths, solved at minimum distance from the uniform solution.
    headings = np.cumsum([0.0] + angles[1:])
    a_mat = np.vstack([np.cos(headings), np.sin(headings), np.ones(n)])
    b_vec = np.array([0.0, 0.0, perimeter])
    e0 = np.full(n, perimeter / n)
    edges = e0 + np.linalg.pinv(a_mat) @ (b_vec - a_mat @ e0)

    segments: list[Segment] = []
    for i in range(n):
        j = (i + 1) % n
        straight = float(edges[i]) - tangent_off[i] - tangent_off[j]
        if straight <= 0.0:
            raise ConfigError("corners overlap: straight segment would be non-positive")
        segments.append(Segment(length=straight, curvature=0.0))
        segments.append(Segment(length=radii[j] * angles[j], curvature=1.0 / radii[j]))

    track = Track(segments=segments,
                  total_length=sum(s.length for s in segments),
                  lane_half_width=spec.lane_half_width_m)
    pos_res, ang_res = track.closure_residual()
    if pos_res > 1e-6 or ang_res > 1e-6:
        raise ConfigError(f"track does not close: residual {pos_res:.2e} m, {ang_res:.2e} rad")
    return track


def project_to_centerline(track: Track, point: tuple[float, float]) -> tuple[float, float, float]:
    """Nearest-point projection onto the centerline.

    Returns (s, e, theta_p): arclength in [0, total), signed lateral offset
    (positive to the left of the travel direction), and tangent heading.
    Equidistant candidates tie-break to the smaller s.
    """
    px, py = point
    if not (math.isfinite(px) and math.isfinite(py)):
        raise ValueError("projection point must be finite")

    best: tuple[float, float, float, float] | None = None  # (dist, s, e, theta)
    for idx, seg in enumerate(track.segments):
        x0, y0, th = track.poses[idx]
        s0 = track.cum_lengths[idx]
        if seg.curvature == 0.0:
            tx, ty = math.cos(th), math.sin(th)
            u = (px - x0) * tx + (py - y0) * ty
            u = min(seg.length, max(0.0, u))
            fx, fy = x0 + u * tx, y0 + u * ty
            dist = math.hypot(px - fx, py - fy)
            e = tx * (py - fy) - ty * (px - fx)
            cand = (dist, s0 + u, e, th)
        else:
            k = seg.curvature
            r = 1.0 / abs(k)
            side = 1.0 if k > 0 else -1.0
            cx = x0 - (1.0 / k) * math.sin(th)
            cy = y0 + (1.0 / k) * math.cos(th)
            rho = math.hypot(px - cx, py - cy)
            alpha = math.atan2(py - cy, px - cx)
            alpha0 = math.atan2(y0 - cy, x0 - cx)
            sweep = abs(k) * seg.length
            u_ang = (side * (alpha - alpha0)) % (2.0 * math.pi)
            if u_ang <= sweep:
                u = u_ang * r
                fx, fy, fth = _advance((x0, y0, th), seg, u)
                dist = abs(r - rho)
                e = side * (r - rho)
            else:
                # outside the arc span: clamp to the angularly nearer endpoint
                u = seg.length if (u_ang - sweep) < (2.0 * math.pi - u_ang) else 0.0
                fx, fy, fth = _advance((x0, y0, th), seg, u)
                dist = math.hypot(px - fx, py - fy)
                tx, ty = math.cos(fth), math.sin(fth)
                e = tx * (py - fy) - ty * (px - fx)
            cand = (dist, s0 + u, e, fth)
        if best is None or cand[0] < best[0] - 1e-12 or (abs(cand[0] - best[0]) <= 1e-12 and cand[1] < best[1]):
            best = cand

    assert best is not None
    _, s, e, theta_p = best
    if s >= track.total_length:
        s -= track.total_length
    return s, e, wrap_angle(theta_p)
