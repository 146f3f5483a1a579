"""Two-channel binary bird's-eye-view raster of a vehicle-frame point cloud."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import BevConfig
from .lidar import PointCloud


@dataclass
class BevImage:
    ground: np.ndarray     # (side, side) uint8 bits, row 0 = farthest forward
    nonground: np.ndarray  # (side, side) uint8 bits
    resolution: float      # m / cell
    extent: tuple[float, float, float]
    dropped_nonfinite: int = 0

    @property
    def side(self) -> int:
        return self.ground.shape[0]

    def packed_planes(self) -> tuple[bytes, bytes]:
        """Row-major packed-bit planes (side*side/8 bytes each)."""
        return (np.packbits(self.ground, axis=None).tobytes(),
                np.packbits(self.nonground, axis=None).tobytes())

    def to_pbm(self, channel: str = "ground") -> bytes:
        """PBM (P4) export for inspection; set bits render black."""
        plane = self.ground if channel == "ground" else self.nonground
        header = f"P4\n{self.side} {self.side}\n".encode()
        return header + np.packbits(plane, axis=1).tobytes()


def unpack_planes(ground_bytes: bytes, nonground_bytes: bytes, side: int) -> tuple[np.ndarray, np.ndarray]:
    g = np.unpackbits(np.frombuffer(ground_bytes, np.uint8))[: side * side].reshape(side, side)
    n = np.unpackbits(np.frombuffer(nonground_bytes, np.uint8))[: side * side].reshape(side, side)
    return g, n


def rasterize(cloud: PointCloud, params: BevConfig) -> BevImage:
    """Bin vehicle-frame points into the occupancy grid.

    Vehicle sits at the image center, +x (forward) points up:
    row = floor((half - px) / res), col = floor((py + half) / res).
    Points outside the extent or above height_max are dropped; the channel
    split re-derives ground membership from pz (< ground_z_max).
    """
    side = params.grid_side
    res = params.extent_m / side
    half = params.extent_m / 2.0
    ground = np.zeros((side, side), np.uint8)
    nonground = np.zeros((side, side), np.uint8)

    pts = np.asarray(cloud.points, float).reshape(-1, 3)
    finite = np.isfinite(pts).all(axis=1)
    dropped = int((~finite).sum())
    pts = pts[finite]

    px, py, pz = pts[:, 0], pts[:, 1], pts[:, 2]
    inside = (np.abs(px) <= half) & (np.abs(py) <= half) & (pz >= 0.0) & (pz <= params.height_max_m)
    px, py, pz = px[inside], py[inside], pz[inside]

    rows = np.clip(np.floor((half - px) / res).astype(int), 0, side - 1)
    cols = np.clip(np.floor((py + half) / res).astype(int), 0, side - 1)
    is_ground = pz < params.ground_z_max_m
    ground[rows[is_ground], cols[is_ground]] = 1
    nonground[rows[~is_ground], cols[~is_ground]] = 1

    return BevImage(ground=ground, nonground=nonground, resolution=res,
                    extent=(params.extent_m, params.extent_m, params.height_max_m),
                    dropped_nonfinite=dropped)
