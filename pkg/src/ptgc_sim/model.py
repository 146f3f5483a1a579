"""Multimodal intended-trajectory model: LSTM motion encoder, residual
convolutional context encoder, dense decoder emitting N candidate
trajectories with probabilities. Ablation variants zero out either feature."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .bev import BevImage
from .config import PredConfig

MODEL_MAGIC = b"PTGCNN1\x00"


@dataclass
class CandidateSet:
    trajectories: np.ndarray  # (N, T, 2) vehicle-frame waypoints
    probs: np.ndarray         # (N,), non-negative, sums to 1

    def best(self) -> np.ndarray:
        """Highest-probability candidate (first index on ties)."""
        return self.trajectories[int(np.argmax(self.probs))]


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int = 2):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.shortcut = nn.Conv2d(c_in, c_out, 1, stride=stride)
        self.act = nn.ReLU()

    def forward(self, x):
        out = self.conv2(self.act(self.conv1(x)))
        return self.act(out + self.shortcut(x))


class ContextEncoder(nn.Module):
    """Stem conv + 4 stride-2 residual blocks + 4x4 spatial average pool +
    projection. The pooled grid (not a global average) keeps a coarse spatial
    layout so the encoding can localize the road relative to the vehicle."""

    POOL = 4

    def __init__(self, base_channels: int, out_dim: int):
        super().__init__()
        c = base_channels
        self.stem = nn.Conv2d(2, c, 3, padding=1)
        self.blocks = nn.Sequential(
            ResidualBlock(c, c * 2),
            ResidualBlock(c * 2, c * 4),
            ResidualBlock(c * 4, c * 8),
            ResidualBlock(c * 8, c * 8),
        )
        self.pool = nn.AdaptiveAvgPool2d(self.POOL)
        self.proj = nn.Linear(c * 8 * self.POOL * self.POOL, out_dim)
        # start the context contribution at zero so adding the context branch
        # can never make the model worse than the motion-only variant at init;
        # the branch is recruited by gradient only where it reduces the loss
        nn.init.zeros_(self.proj.weight)
        nn.init.zeros_(self.proj.bias)

    def forward(self, bev):
        x = torch.relu(self.stem(bev))
        x = self.blocks(x)
        x = self.pool(x).flatten(1)
        return self.proj(x)


class MotionEncoder(nn.Module):
    """Per-step embedding of the (state, command) 7-vector, then an LSTM."""

    def __init__(self, embed_size: int, hidden_size: int):
        super().__init__()
        self.embed = nn.Linear(7, embed_size)
        self.lstm = nn.LSTM(embed_size, hidden_size, batch_first=True)

    def forward(self, seq):
        _, (h_n, _) = self.lstm(torch.relu(self.embed(seq)))
        return h_n[-1]


class TrajectoryPredictor(nn.Module):
    """Full model; mode flags select the ablation variant."""

    def __init__(self, cfg: PredConfig, motion_on: bool = True, context_on: bool = True):
        super().__init__()
        if not 0 < cfg.num_modes:
            raise ValueError("num_modes must be positive")
        self.cfg = cfg
        self.motion_on = motion_on
        self.context_on = context_on
        self.horizon = cfg.horizon_steps
        self.num_modes = cfg.num_modes
        self.head_dim = (2 * cfg.horizon_steps + 1) * cfg.num_modes

        self.motion_encoder = MotionEncoder(cfg.embed_size, cfg.hidden_size) if motion_on else None
        self.context_encoder = ContextEncoder(cfg.base_channels, cfg.context_dim) if context_on else None
        feat = cfg.hidden_size + cfg.context_dim
        self.decoder = nn.Sequential(
            nn.Linear(feat, cfg.decoder_hidden),
            nn.ReLU(),
            nn.Linear(cfg.decoder_hidden, self.head_dim),
        )
        # start at the kinematic rollout (plus per-mode bias offsets that keep
        # the mixture from collapsing onto one winner)
        nn.init.zeros_(self.decoder[-1].weight)

    def _rollout_baseline(self, motion_seq: torch.Tensor) -> torch.Tensor:
        """Constant-speed bicycle rollout toward the latest commanded steer.

        The anchor frame puts the newest state at the origin with zero heading.
        The current wheel angle is recovered from the last heading increment,
        then slewed toward the held command while the bicycle integrates
        forward. The head only regresses residuals (operator corrections,
        throttle effects), which keeps outputs small and, crucially, makes the
        prediction track intent even where the vehicle's own motion disagrees
        with the commands. Counts as motion input, hence gated on motion_on.
        """
        cfg = self.cfg
        dt = cfg.dt_pred_s
        v = motion_seq[:, -1, 2]
        v_safe = v.clamp(min=0.1)
        omega0 = -motion_seq[:, -2, 3] / dt if motion_seq.shape[1] >= 2 \
            else torch.zeros_like(v)
        lim = cfg.wheel_angle_max_rad
        wheel = torch.atan(omega0 * cfg.wheelbase_m / v_safe).clamp(-lim, lim)
        target = (motion_seq[:, -1, 4].clamp(-1.0, 1.0)) * lim
        theta = torch.zeros_like(v)
        x = torch.zeros_like(v)
        y = torch.zeros_like(v)
        sub = 2  # integrate at half the prediction step for fidelity
        h = dt / sub
        slew = cfg.steer_slew_rad_s * h
        points = []
        for _ in range(self.horizon):
            for _ in range(sub):
                wheel = wheel + (target - wheel).clamp(-slew, slew)
                theta = theta + v / cfg.wheelbase_m * torch.tan(wheel) * h
                x = x + v * torch.cos(theta) * h
                y = y + v * torch.sin(theta) * h
            points.append(torch.stack([x, y], dim=-1))
        return torch.stack(points, dim=1)

    # feature scaling for the raw motion rows (x, y, v, theta, steer, throttle, brake)
    _MOTION_SCALE = (0.1, 0.1, 0.1, 1.0, 1.0, 1.0, 1.0)

    def forward(self, motion_seq: torch.Tensor, bev: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """motion_seq (B, Th+1, 7), bev (B, 2, side, side) ->
        trajectories (B, N, T, 2), probs (B, N)."""
        batch = motion_seq.shape[0]
        dtype = next(self.decoder.parameters()).dtype
        if self.motion_encoder is not None:
            scale = torch.as_tensor(self._MOTION_SCALE, dtype=motion_seq.dtype,
                                    device=motion_seq.device)
            m = self.motion_encoder(motion_seq * scale)
        else:
            m = torch.zeros(batch, self.cfg.hidden_size, dtype=dtype, device=motion_seq.device)
        if self.context_encoder is not None:
            e = self.context_encoder(bev)
        else:
            e = torch.zeros(batch, self.cfg.context_dim, dtype=dtype, device=motion_seq.device)
        head = self.decoder(torch.cat([m, e], dim=1))
        head = head.view(batch, self.num_modes, 2 * self.horizon + 1)
        trajs = head[:, :, : 2 * self.horizon].reshape(batch, self.num_modes, self.horizon, 2)
        if self.motion_on:
            t = torch.arange(1, self.horizon + 1, dtype=trajs.dtype,
                             device=trajs.device) * self.cfg.dt_pred_s
            ramp = ((t - self.cfg.residual_ramp_start_s)
                    / max(self.cfg.residual_ramp_s, self.cfg.dt_pred_s)).clamp(0.0, 1.0)
            trajs = trajs * ramp[None, None, :, None] + self._rollout_baseline(motion_seq)[:, None]
        probs = torch.softmax(head[:, :, -1], dim=1)
        return trajs, probs


def motion_tensor(states: np.ndarray, commands: np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """Stack anchored states (n, 4) and commands (n, 3) into a (1, n, 7) input."""
    seq = np.concatenate([np.asarray(states, float), np.asarray(commands, float)], axis=1)
    return torch.as_tensor(seq, dtype=dtype).unsqueeze(0)


def bev_tensor(bev: BevImage, dtype=torch.float32) -> torch.Tensor:
    planes = np.stack([bev.ground, bev.nonground]).astype(np.float32)
    return torch.as_tensor(planes, dtype=dtype).unsqueeze(0)


def model_forward(model: TrajectoryPredictor, states: np.ndarray, commands: np.ndarray,
                  bev: BevImage) -> CandidateSet:
    """Single-record forward pass returning numpy candidates."""
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        trajs, probs = model(motion_tensor(states, commands, dtype), bev_tensor(bev, dtype))
    return CandidateSet(trajectories=trajs[0].cpu().numpy().astype(np.float64),
                        probs=probs[0].cpu().numpy().astype(np.float64))


def save_model(model: TrajectoryPredictor, path) -> None:
    """Binary model file: magic, JSON meta, layer manifest, f32 weights."""
    meta = {
        "motion_on": model.motion_on,
        "context_on": model.context_on,
        "pred": {
            "history_steps": model.cfg.history_steps,
            "horizon_steps": model.cfg.horizon_steps,
            "num_modes": model.cfg.num_modes,
            "dt_pred_s": model.cfg.dt_pred_s,
            "alpha": model.cfg.alpha,
            "hidden_size": model.cfg.hidden_size,
            "context_dim": model.cfg.context_dim,
            "embed_size": model.cfg.embed_size,
            "decoder_hidden": model.cfg.decoder_hidden,
            "base_channels": model.cfg.base_channels,
            "wheelbase_m": model.cfg.wheelbase_m,
            "wheel_angle_max_rad": model.cfg.wheel_angle_max_rad,
            "steer_slew_rad_s": model.cfg.steer_slew_rad_s,
            "residual_ramp_start_s": model.cfg.residual_ramp_start_s,
            "residual_ramp_s": model.cfg.residual_ramp_s,
        },
    }
    state = model.state_dict()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        meta_blob = json.dumps(meta, sort_keys=True).encode()
        fh.write(struct.pack("<I", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            name_b = name.encode()
            fh.write(struct.pack("<H", len(name_b)))
            fh.write(name_b)
            shape = tuple(tensor.shape)
            fh.write(struct.pack("<B", len(shape)))
            for d in shape:
                fh.write(struct.pack("<I", d))
        for tensor in state.values():
            fh.write(tensor.detach().cpu().numpy().astype("<f4").tobytes())


def read_manifest(path) -> tuple[dict, list[tuple[str, tuple[int, ...]]]]:
    with open(path, "rb") as fh:
        if fh.read(8) != MODEL_MAGIC:
            raise ValueError("not a model file (bad magic)")
        meta = json.loads(fh.read(struct.unpack("<I", fh.read(4))[0]))
        n_layers = struct.unpack("<I", fh.read(4))[0]
        manifest = []
        for _ in range(n_layers):
            name_len = struct.unpack("<H", fh.read(2))[0]
            name = fh.read(name_len).decode()
            ndim = struct.unpack("<B", fh.read(1))[0]
            shape = tuple(struct.unpack("<I", fh.read(4))[0] for _ in range(ndim))
            manifest.append((name, shape))
    return meta, manifest


def load_model(path) -> TrajectoryPredictor:
    meta, manifest = read_manifest(path)
    cfg = PredConfig(**meta["pred"])
    model = TrajectoryPredictor(cfg, motion_on=meta["motion_on"], context_on=meta["context_on"])
    with open(path, "rb") as fh:
        fh.read(8)
        meta_len = struct.unpack("<I", fh.read(4))[0]
        fh.read(meta_len)
        n_layers = struct.unpack("<I", fh.read(4))[0]
        for _ in range(n_layers):
            name_len = struct.unpack("<H", fh.read(2))[0]
            fh.read(name_len)
            ndim = struct.unpack("<B", fh.read(1))[0]
            fh.read(4 * ndim)
        state = {}
        for name, shape in manifest:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            state[name] = torch.as_tensor(
                np.frombuffer(buf, "<f4").reshape(shape).copy())
    model.load_state_dict(state)
    model.eval()
    return model
