"""Training loop (SGD + momentum, deterministic single-worker) and
ADE/FDE evaluation for the neural variants and the CTRA baseline."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import torch

from .config import PredConfig, TrainConfig
from .ctra import ctra_predict
from .dataset import Dataset, DatasetRecord, record_bev, split_indices
from .losses import batch_total_loss
from .model import TrajectoryPredictor, model_forward


class TrainingDiverged(RuntimeError):
    """Non-finite loss encountered; usually the learning rate is too high."""


@dataclass
class TrainingCurve:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def _tensors_from_records(records: list[DatasetRecord], side: int,
                          dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    motion = np.stack([np.concatenate([r.history.states, r.history.commands], axis=1)
                       for r in records]).astype(np.float32)
    bev = np.stack([np.stack(_bev_planes(r, side)) for r in records]).astype(np.float32)
    gt = np.stack([r.future for r in records]).astype(np.float32)
    return (torch.as_tensor(motion, dtype=dtype),
            torch.as_tensor(bev, dtype=dtype),
            torch.as_tensor(gt, dtype=dtype))


def _bev_planes(rec: DatasetRecord, side: int):
    img = record_bev(rec, side)
    return img.ground, img.nonground


def train(dataset: Dataset, pred_cfg: PredConfig, hyper: TrainConfig,
          motion_on: bool = True, context_on: bool = True,
          progress: Callable[[int, float, float], None] | None = None,
          ) -> tuple[TrajectoryPredictor, TrainingCurve]:
    """Train on the deterministic 3:1:1 split; returns the validation-best
    parameters and the per-epoch loss curve."""
    if dataset.horizon_steps != pred_cfg.horizon_steps or dataset.history_steps != pred_cfg.history_steps:
        raise ValueError("dataset window does not match the prediction config")

    torch.manual_seed(hyper.seed)
    torch.set_num_threads(max(1, torch.get_num_threads()))

    idx_train, idx_val, _ = split_indices(len(dataset.records), hyper.seed)
    recs = dataset.records
    train_m, train_b, train_gt = _tensors_from_records([recs[i] for i in idx_train], dataset.grid_side)
    if len(idx_val):
        val_m, val_b, val_gt = _tensors_from_records([recs[i] for i in idx_val], dataset.grid_side)
    else:
        val_m = val_b = val_gt = None

    model = TrajectoryPredictor(pred_cfg, motion_on=motion_on, context_on=context_on)
    opt = torch.optim.SGD(model.parameters(), lr=hyper.lr, momentum=hyper.momentum)
    gen = torch.Generator().manual_seed(hyper.seed)

    curve = TrainingCurve()
    best_val = float("inf")
    best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    n = train_m.shape[0]
    for epoch in range(hyper.epochs):
        model.train()
        order = torch.randperm(n, generator=gen)
        epoch_loss = 0.0
        for start in range(0, n, hyper.batch_size):
            sel = order[start:start + hyper.batch_size]
            opt.zero_grad()
            trajs, probs = model(train_m[sel], train_b[sel])
            loss = batch_total_loss(trajs, probs, train_gt[sel], alpha=pred_cfg.alpha,
                                    huber=pred_cfg.huber_smoothing,
                                    huber_delta=pred_cfg.huber_delta_m)
            if not torch.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}; try a lower learning rate")
            loss.backward()
            opt.step()
            epoch_loss += loss.item() * len(sel)
        epoch_loss /= n

        if val_m is not None:
            model.eval()
            with torch.no_grad():
                v_trajs, v_probs = model(val_m, val_b)
                val_loss = float(batch_total_loss(v_trajs, v_probs, val_gt,
                                                  alpha=pred_cfg.alpha,
                                                  huber=pred_cfg.huber_smoothing,
                                                  huber_delta=pred_cfg.huber_delta_m))
        else:
            val_loss = epoch_loss

        curve.epochs.append(epoch)
        curve.train_loss.append(epoch_loss)
        curve.val_loss.append(val_loss)
        if progress:
            progress(epoch, epoch_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    model.eval()
    return model, curve


def model_predict_fn(model: TrajectoryPredictor, side: int):
    def predict(rec: DatasetRecord) -> np.ndarray:
        cands = model_forward(model, rec.history.states, rec.history.commands,
                              record_bev(rec, side))
        return cands.best()
    return predict


def ctra_predict_fn(pred_cfg: PredConfig):
    def predict(rec: DatasetRecord) -> np.ndarray:
        return ctra_predict(rec.history.states, pred_cfg.horizon_steps,
                            pred_cfg.dt_pred_s, dt_hist=pred_cfg.dt_pred_s)
    return predict


def evaluate_ade_fde(predict, records: list[DatasetRecord], dt_pred: float,
                     horizons_s: tuple[float, ...] = (0.5, 1.0, 2.0)) -> dict[float, tuple[float, float]]:
    """{horizon_s: (ADE, FDE)} using each record's prediction up to the horizon."""
    if not records:
        raise ValueError("no records to evaluate")
    t_total = len(records[0].future)
    steps = {}
    for h in horizons_s:
        k = int(round(h / dt_pred))
        if k < 1 or k > t_total:
            raise ValueError(f"horizon {h} s exceeds the prediction window of {t_total * dt_pred} s")
        steps[h] = k

    preds = [np.asarray(predict(rec), float) for rec in records]
    table = {}
    for h, k in steps.items():
        ades, fdes = [], []
        for pred, rec in zip(preds, records):
            err = np.linalg.norm(pred[:k] - rec.future[:k], axis=1)
            ades.append(err.mean())
            fdes.append(err[-1])
        table[h] = (float(np.mean(ades)), float(np.mean(fdes)))
    return table


def fde_histogram(predict, records: list[DatasetRecord], dt_pred: float,
                  horizon_s: float = 1.0,
                  thresholds_m: tuple[float, ...] = (1.0, 1.5, 2.0, 2.5, 3.0)) -> dict[float, float]:
    """Fraction of records whose FDE at the horizon exceeds each threshold."""
    k = int(round(horizon_s / dt_pred))
    fdes = np.array([np.linalg.norm(np.asarray(predict(rec), float)[k - 1] - rec.future[k - 1])
                     for rec in records])
    return {thr: float((fdes > thr).mean()) for thr in thresholds_m}
