"""Winner-takes-all multimodal losses: summed-Euclidean regression on the
closest candidate plus cross-entropy on the candidate probabilities."""

from __future__ import annotations

import numpy as np
import torch

PROB_FLOOR = 1e-12


def _first_argmin(values: torch.Tensor) -> int:
    # np.argmin guarantees the first index on ties
    return int(np.argmin(values.detach().cpu().numpy()))


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(x, dtype=torch.float64)


def candidate_distances(trajs, gt) -> torch.Tensor:
    """Summed per-step Euclidean distance of each candidate to the ground
    truth: trajs (N, T, 2), gt (T, 2) -> (N,)."""
    trajs, gt = _as_tensor(trajs), _as_tensor(gt)
    return torch.linalg.norm(trajs - gt.unsqueeze(0), dim=-1).sum(dim=-1)


def winner_index(trajs, gt) -> int:
    """Index of the closest candidate; ties go to the smallest index."""
    return _first_argmin(candidate_distances(trajs, gt))


def regression_loss(trajs, gt, huber: bool = False, huber_delta: float = 1.0) -> torch.Tensor:
    """Winner-only summed Euclidean distance; gradient flows only to the
    winner's waypoints. Optional Huber smoothing of the per-step distances."""
    trajs, gt = _as_tensor(trajs), _as_tensor(gt)
    dists = torch.linalg.norm(trajs - gt.unsqueeze(0), dim=-1)  # (N, T)
    j_star = _first_argmin(dists.sum(dim=-1))
    per_step = dists[j_star]
    if huber:
        per_step = torch.where(per_step <= huber_delta,
                               per_step ** 2 / (2.0 * huber_delta),
                               per_step - huber_delta / 2.0)
    return per_step.sum()


def classification_loss(probs, j_star: int) -> torch.Tensor:
    probs = _as_tensor(probs)
    return -torch.log(torch.clamp(probs[j_star], min=PROB_FLOOR))


def total_loss(trajs, probs, gt, alpha: float = 1.0, huber: bool = False,
               huber_delta: float = 1.0) -> torch.Tensor:
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")
    j_star = winner_index(_as_tensor(trajs).detach(), gt)
    return (regression_loss(trajs, gt, huber=huber, huber_delta=huber_delta)
            + alpha * classification_loss(probs, j_star))


def batch_total_loss(trajs: torch.Tensor, probs: torch.Tensor, gt: torch.Tensor,
                     alpha: float = 1.0, huber: bool = False,
                     huber_delta: float = 1.0) -> torch.Tensor:
    """Mean per-record total loss: trajs (B, N, T, 2), probs (B, N), gt (B, T, 2)."""
    dists = torch.linalg.norm(trajs - gt.unsqueeze(1), dim=-1)  # (B, N, T)
    sums = dists.sum(dim=-1)                                    # (B, N)
    j_star = torch.argmin(sums.detach(), dim=1)                 # (B,)
    b_idx = torch.arange(trajs.shape[0], device=trajs.device)
    per_step = dists[b_idx, j_star]                             # (B, T)
    if huber:
        per_step = torch.where(per_step <= huber_delta,
                               per_step ** 2 / (2.0 * huber_delta),
                               per_step - huber_delta / 2.0)
    reg = per_step.sum(dim=-1)
    cls = -torch.log(torch.clamp(probs[b_idx, j_star], min=PROB_FLOOR))
    return (reg + alpha * cls).mean()
