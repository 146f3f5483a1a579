"""Dataset construction: sliding windows over decimated episode logs,
frame anchoring at the newest state, and the binary record file format."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bev import BevImage, rasterize, unpack_planes
from .config import BevConfig, PredConfig, SensorConfig
from .lidar import synth_point_cloud
from .track import Track
from .vehicle import VehicleState, wrap_angle

DATASET_MAGIC = b"PTGCDS1\x00"


@dataclass
class MotionHistory:
    states: np.ndarray    # (Th+1, 4): x, y, v, theta in the newest-state frame
    commands: np.ndarray  # (Th+1, 3): steer, throttle, brake


@dataclass
class DatasetRecord:
    history: MotionHistory
    bev_ground: bytes     # packed-bit plane, row-major
    bev_nonground: bytes
    future: np.ndarray    # (T, 2) ground-truth waypoints, same frame


@dataclass
class Dataset:
    records: list[DatasetRecord]
    history_steps: int
    horizon_steps: int
    grid_side: int


def anchor_frame(states: np.ndarray) -> np.ndarray:
    """Re-express (n, 4) world states in the frame of the newest one
    (origin at its position, heading 0)."""
    states = np.asarray(states, float)
    ax, ay, atheta = states[-1, 0], states[-1, 1], states[-1, 3]
    c, s = math.cos(atheta), math.sin(atheta)
    out = states.copy()
    dx, dy = states[:, 0] - ax, states[:, 1] - ay
    out[:, 0] = c * dx + s * dy
    out[:, 1] = -s * dx + c * dy
    out[:, 3] = np.array([wrap_angle(t - atheta) for t in states[:, 3]])
    return out


def anchor_points(points: np.ndarray, anchor_state: np.ndarray) -> np.ndarray:
    """Transform (n, 2) world points into the anchor state's frame."""
    ax, ay, atheta = anchor_state[0], anchor_state[1], anchor_state[3]
    c, s = math.cos(atheta), math.sin(atheta)
    dx = points[:, 0] - ax
    dy = points[:, 1] - ay
    return np.stack([c * dx + s * dy, -s * dx + c * dy], axis=1)


def windows_from_log(states_20hz: np.ndarray, commands_20hz: np.ndarray,
                     ticks_20hz: np.ndarray, pred: PredConfig,
                     decimation: int = 2):
    """Yield (anchor_tick, states, commands, future) windows on the
    dt_pred grid. states_20hz is (n, 4), commands_20hz is (n, 3)."""
    states = states_20hz[::decimation]
    commands = commands_20hz[::decimation]
    ticks = ticks_20hz[::decimation]
    th, t_fut = pred.history_steps, pred.horizon_steps
    n = len(states)
    for a in range(th, n - t_fut):
        yield (int(ticks[a]),
               states[a - th: a + 1],
               commands[a - th: a + 1],
               states[a + 1: a + 1 + t_fut, :2])


def build_records(states_20hz: np.ndarray, commands_20hz: np.ndarray,
                  ticks_20hz: np.ndarray, track: Track, pred: PredConfig,
                  sensor: SensorConfig, bev_cfg: BevConfig,
                  cloud_seed_base: int) -> list[DatasetRecord]:
    """Window one zero-delay episode log into anchored dataset records."""
    records = []
    for tick, states, commands, future in windows_from_log(
            states_20hz, commands_20hz, ticks_20hz, pred):
        anchored = anchor_frame(states)
        rel_future = anchor_points(np.asarray(future, float), states[-1])
        anchor = states[-1]
        vstate = VehicleState(x=anchor[0], y=anchor[1], v=anchor[2],
                              theta=anchor[3], wheel_angle=0.0)
        cloud = synth_point_cloud(track, vstate, sensor, seed=cloud_seed_base + tick)
        bev = rasterize(cloud, bev_cfg)
        g, ng = bev.packed_planes()
        records.append(DatasetRecord(
            history=MotionHistory(states=anchored, commands=np.asarray(commands, float)),
            bev_ground=g, bev_nonground=ng, future=rel_future))
    return records


def save_dataset(ds: Dataset, path) -> None:
    side = ds.grid_side
    plane_bytes = side * side // 8
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<IIII", len(ds.records), ds.history_steps,
                             ds.horizon_steps, side))
        for rec in ds.records:
            fh.write(rec.history.states.astype("<f4").tobytes())
            fh.write(rec.history.commands.astype("<f4").tobytes())
            assert len(rec.bev_ground) == plane_bytes and len(rec.bev_nonground) == plane_bytes
            fh.write(rec.bev_ground)
            fh.write(rec.bev_nonground)
            fh.write(rec.future.astype("<f4").tobytes())


def load_dataset(path) -> Dataset:
    data = Path(path).read_bytes()
    if data[:8] != DATASET_MAGIC:
        raise ValueError("not a dataset file (bad magic)")
    count, th, t_fut, side = struct.unpack_from("<IIII", data, 8)
    off = 24
    n_hist = th + 1
    plane_bytes = side * side // 8
    records = []
    for _ in range(count):
        states = np.frombuffer(data, "<f4", n_hist * 4, off).reshape(n_hist, 4).astype(float)
        off += n_hist * 16
        commands = np.frombuffer(data, "<f4", n_hist * 3, off).reshape(n_hist, 3).astype(float)
        off += n_hist * 12
        g = data[off: off + plane_bytes]; off += plane_bytes
        ng = data[off: off + plane_bytes]; off += plane_bytes
        future = np.frombuffer(data, "<f4", t_fut * 2, off).reshape(t_fut, 2).astype(float)
        off += t_fut * 8
        records.append(DatasetRecord(MotionHistory(states, commands), g, ng, future))
    return Dataset(records=records, history_steps=th, horizon_steps=t_fut, grid_side=side)


def record_bev(rec: DatasetRecord, side: int) -> BevImage:
    g, ng = unpack_planes(rec.bev_ground, rec.bev_nonground, side)
    return BevImage(ground=g, nonground=ng, resolution=32.0 / side,
                    extent=(32.0, 32.0, 5.0))


def split_indices(n: int, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Deterministic 3:1:1 train/validation/test split by seeded shuffle."""
    perm = np.random.default_rng(seed).permutation(n)
    n_train = (3 * n) // 5
    n_val = n // 5
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]
