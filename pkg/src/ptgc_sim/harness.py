"""Closed-loop episodes (DC and PTGC), per-run metrics, validity checks,
improvement scores, and experiment batches."""

from __future__ import annotations

import csv
import dataclasses
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .bev import rasterize
from .config import GlobalConfig
from .ctra import ctra_predict
from .dataset import anchor_frame, anchor_points
from .delay import (DelayChannel, TimestampedMessage, ECHO_SENTINEL,
                    estimate_round_trip, ms_to_ticks)
from .lidar import synth_point_cloud
from .model import CandidateSet, TrajectoryPredictor, load_model, model_forward
from .operator_model import ScriptedOperator
from .track import Track, build_test_track, project_to_centerline
from .tracker import (DelayExceedsHorizon, GuidanceTrajectory, stanley_steering,
                      steering_command, tracking_error, truncate_guidance)
from .vehicle import ControlCommand, VehicleState, step_vehicle, wrap_angle

PROTOCOL_DELAYS_MS = (0.0, 200.0, 400.0, 600.0, 800.0, 1000.0)

LOG_COLUMNS = ("tick", "t_s", "x", "y", "v", "theta", "wheel_angle",
               "op_steer", "op_throttle", "op_brake", "applied_steer",
               "e_m", "s_m", "guidance_age_ticks")


@dataclass
class ScenarioConfig:
    mode: str                      # "dc" or "ptgc"
    delay_ms: float
    seed: int
    predictor: str = "ctra"        # "ctra", "perfect", or a model file path
    repeat: int = 0
    # initial pose relative to the track, mainly for data-collection episodes
    start_s_m: float = 0.0
    start_e_m: float = 0.0
    start_heading_rad: float = 0.0
    # actuator-side AR(1) steering bias (crosswind stand-in) applied to the
    # steer the vehicle receives; data-collection episodes use it so that
    # command/motion disagreement appears in the training distribution
    steer_bias_std: float = 0.0
    steer_bias_corr_s: float = 4.0

    def __post_init__(self) -> None:
        if self.mode not in ("dc", "ptgc"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.delay_ms < 0:
            raise ValueError("delay must be non-negative")


@dataclass
class RunLog:
    config_hash: str
    seed: int
    mode: str
    delay_ms: float
    rows: list[tuple] = field(default_factory=list)
    lap_complete: bool = False
    lap_time_s: float = 0.0
    progress_m: float = 0.0
    delay_exceeded_horizon: bool = False

    def column(self, name: str) -> np.ndarray:
        idx = LOG_COLUMNS.index(name)
        return np.array([row[idx] for row in self.rows], float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config={self.config_hash} seed={self.seed} mode={self.mode} "
                  f"delay_ms={self.delay_ms:g} lap_complete={int(self.lap_complete)} "
                  f"lap_time_s={self.lap_time_s:.10g} "
                  f"delay_exceeded_horizon={int(self.delay_exceeded_horizon)}\n")
        buf.write(",".join(LOG_COLUMNS) + "\n")
        for row in self.rows:
            buf.write(",".join(f"{v:.10g}" if isinstance(v, float) else str(v) for v in row))
            buf.write("\n")
        return buf.getvalue()


@dataclass
class RunMetrics:
    tct: float
    d2c: float
    se: float
    mean_speed: float
    valid: bool
    reason: str = ""


class CtraPredictorAdapter:
    def __init__(self, pred_cfg):
        self.cfg = pred_cfg

    def predict(self, states, commands, bev, anchor_tick, anchor_state, **_) -> CandidateSet:
        traj = ctra_predict(states, self.cfg.horizon_steps, self.cfg.dt_pred_s,
                            dt_hist=self.cfg.dt_pred_s)
        return CandidateSet(trajectories=traj[None], probs=np.array([1.0]))


class ModelPredictorAdapter:
    def __init__(self, model: TrajectoryPredictor):
        self.model = model

    def predict(self, states, commands, bev, anchor_tick, anchor_state, **_) -> CandidateSet:
        return model_forward(self.model, states, commands, bev)


class PerfectPredictorAdapter:
    """Oracle stub: emits the ground-truth path of a zero-delay reference run.

    Exists to isolate tracker quality from prediction quality, so unlike the
    real predictors it may peek at the vehicle's present state: the guidance
    is timed so the split point after t_d truncation coincides with the
    reference point nearest the vehicle right now."""

    def __init__(self, reference: RunLog, pred_cfg, dt_s: float):
        self.cfg = pred_cfg
        self.dt_s = dt_s
        xs = reference.column("x")
        ys = reference.column("y")
        # extend the trace along the final heading so arclength queries past
        # the log's end stay defined
        hx, hy = xs[-1] - xs[-2], ys[-1] - ys[-2]
        norm = math.hypot(hx, hy) or 1.0
        xs = np.append(xs, xs[-1] + 1000.0 * hx / norm)
        ys = np.append(ys, ys[-1] + 1000.0 * hy / norm)
        self.xs, self.ys = xs, ys
        self.cum_s = np.concatenate([[0.0], np.cumsum(np.hypot(np.diff(xs), np.diff(ys)))])

    def _nearest_s(self, x: float, y: float) -> float:
        d2 = (self.xs - x) ** 2 + (self.ys - y) ** 2
        return float(self.cum_s[int(np.argmin(d2))])

    def predict(self, states, commands, bev, anchor_tick, anchor_state,
                now_tick=None, now_state=None, **_) -> CandidateSet:
        s_a = self._nearest_s(anchor_state[0], anchor_state[1])
        if now_state is None:
            now_tick, now_state = anchor_tick, anchor_state
        s_n = self._nearest_s(now_state[0], now_state[1])
        t_d = (now_tick - anchor_tick) * self.dt_s
        v = max(float(now_state[2]), 0.0)
        taus = self.cfg.dt_pred_s * np.arange(1, self.cfg.horizon_steps + 1)
        if t_d > 0.0:
            targets = np.where(taus <= t_d, s_a + (s_n - s_a) * taus / t_d,
                               s_n + v * (taus - t_d))
        else:
            targets = s_n + v * taus
        world = np.column_stack([np.interp(targets, self.cum_s, self.xs),
                                 np.interp(targets, self.cum_s, self.ys)])
        local = anchor_points(world, anchor_state)
        return CandidateSet(trajectories=local[None], probs=np.array([1.0]))


def make_predictor(scn: ScenarioConfig, cfg: GlobalConfig, reference: RunLog | None = None):
    if scn.predictor == "ctra":
        return CtraPredictorAdapter(cfg.pred)
    if scn.predictor == "perfect":
        if reference is None:
            raise ValueError("perfect predictor needs a reference run log")
        return PerfectPredictorAdapter(reference, cfg.pred, cfg.sim.dt_s)
    return ModelPredictorAdapter(_load_model_cached(scn.predictor))


@lru_cache(maxsize=4)
def _load_model_cached(path: str) -> TrajectoryPredictor:
    return load_model(path)


def run_episode(cfg: GlobalConfig, scn: ScenarioConfig, track: Track | None = None,
                reference: RunLog | None = None) -> RunLog:
    """Run one episode; deterministic for a fixed (cfg, scenario)."""
    track = track or build_test_track(cfg.track)
    dt = cfg.sim.dt_s
    up_ticks = ms_to_ticks(scn.delay_ms / 2.0, dt)
    down_ticks = ms_to_ticks(scn.delay_ms / 2.0, dt)
    nominal_rt = up_ticks + down_ticks

    op_params = dataclasses.replace(cfg.operator, seed=scn.seed)
    operator = ScriptedOperator(op_params, cfg.vehicle, track)
    predictor = make_predictor(scn, cfg, reference) if scn.mode == "ptgc" else None

    uplink: DelayChannel[ControlCommand] = DelayChannel(delay_ticks=up_ticks)
    downlink: DelayChannel[VehicleState] = DelayChannel(delay_ticks=down_ticks)

    x0, y0 = track.point_at(scn.start_s_m, scn.start_e_m)
    _, _, th0 = track.pose_at(scn.start_s_m)
    state = VehicleState(x=x0, y=y0, v=0.0,
                         theta=wrap_angle(th0 + scn.start_heading_rad), wheel_angle=0.0)

    pred_stride = max(1, int(round(cfg.pred.dt_pred_s / dt)))
    hist_len = cfg.pred.history_steps + 1

    log = RunLog(config_hash=cfg.config_hash(), seed=scn.seed, mode=scn.mode,
                 delay_ms=scn.delay_ms)
    state_by_tick: dict[int, np.ndarray] = {}
    cmd_by_origin: dict[int, TimestampedMessage] = {}
    last_seen: TimestampedMessage | None = None
    last_cmd_msg: TimestampedMessage | None = None
    guidance: GuidanceTrajectory | None = None
    predictions: list[PredictionRecord] = []
    hold_ticks = int(round(cfg.tracker.guidance_hold_s / dt))
    keep_preds = hold_ticks // max(1, int(round(cfg.pred.dt_pred_s / dt))) + 2
    bias_rng = np.random.default_rng(scn.seed * 7_919 + 17)
    steer_bias = 0.0
    progress = 0.0
    s_prev: float | None = None
    max_ticks = int(round(cfg.sim.max_sim_time_s / dt))

    for tick in range(max_ticks):
        state_by_tick[tick] = np.array([state.x, state.y, state.v, state.theta])

        # downlink: vehicle state to the operator
        downlink.send(TimestampedMessage(payload=state, origin_tick=tick), tick)
        for msg in downlink.deliver_due(tick):
            last_seen = msg

        # operator reacts to the newest delayed frame
        seen_state = last_seen.payload if last_seen is not None else state
        echo = last_seen.origin_tick if last_seen is not None else ECHO_SENTINEL
        cmd = operator.step(seen_state, dt)
        uplink.send(TimestampedMessage(payload=cmd, origin_tick=tick,
                                       feedback_echo_tick=echo), tick)

        # uplink: commands reaching the vehicle
        for msg in uplink.deliver_due(tick):
            cmd_by_origin[msg.origin_tick] = msg
            last_cmd_msg = msg

        op_cmd = last_cmd_msg.payload if last_cmd_msg is not None else ControlCommand(0.0, 0.0, 0.0)

        if scn.mode == "ptgc" and last_cmd_msg is not None and tick % pred_stride == 0:
            rec = _try_predict(
                cfg, track, predictor, state, state_by_tick, cmd_by_origin,
                last_cmd_msg, tick, nominal_rt, pred_stride, hist_len, scn.seed)
            if rec is not None:
                predictions.append(rec)
                del predictions[:-keep_preds]

        if predictions:
            new_guidance = _guidance_from_predictions(
                predictions, tick, hold_ticks, dt, cfg.pred.dt_pred_s, log)
            if new_guidance is not None:
                guidance = new_guidance

        if guidance is not None:
            k_eff = cfg.tracker.k
            if cfg.tracker.delay_gain_tau_s > 0.0 and predictions:
                t_d_s = predictions[-1].t_d_ticks * dt
                k_eff = k_eff / (1.0 + (t_d_s / cfg.tracker.delay_gain_tau_s) ** 2)
            e_g, theta_e = tracking_error(state, guidance)
            delta = stanley_steering(e_g, theta_e, state.v, k_eff,
                                     v_min=cfg.tracker.v_min_mps,
                                     wheel_angle_max=cfg.vehicle.wheel_angle_max_rad)
            applied_steer = steering_command(delta, cfg.vehicle.wheel_angle_max_rad)
            applied = ControlCommand(applied_steer, op_cmd.throttle, op_cmd.brake)
        else:
            applied = op_cmd  # DC mode, or PTGC warmup before the first guidance

        s, e, _ = project_to_centerline(track, (state.x, state.y))
        if s_prev is not None:
            ds = (s - s_prev + track.total_length / 2.0) % track.total_length - track.total_length / 2.0
            progress += ds
        s_prev = s

        guidance_age = tick - guidance.source_tick if guidance is not None else -1
        log.rows.append((tick, tick * dt, state.x, state.y, state.v, state.theta,
                         state.wheel_angle, op_cmd.steer, op_cmd.throttle, op_cmd.brake,
                         applied.steer, e, s, guidance_age))

        if progress >= track.total_length:
            log.lap_complete = True
            log.lap_time_s = tick * dt
            break

        if scn.steer_bias_std > 0.0 and scn.steer_bias_corr_s > 0.0:
            rho = math.exp(-dt / scn.steer_bias_corr_s)
            sigma = scn.steer_bias_std * math.sqrt(1.0 - rho * rho)
            steer_bias = rho * steer_bias + sigma * bias_rng.standard_normal()
            applied = ControlCommand(applied.steer + steer_bias,
                                     applied.throttle, applied.brake).clamped()
        state = step_vehicle(state, applied, dt, cfg.vehicle)

    log.progress_m = progress
    return log


@dataclass
class PredictionRecord:
    """One prediction cycle's output, kept so the tracker can steer against a
    slightly aged path: a candidate re-truncated by (delay + age) exposes the
    vehicle's true drift, whereas a fresh one passes through its own pose."""
    tick: int
    candidate: np.ndarray                    # (T, 2) best candidate, anchor frame
    anchor_pose: tuple[float, float, float]
    t_d_ticks: int


def _guidance_from_predictions(predictions, tick, hold_ticks, dt_s, dt_pred,
                               log) -> GuidanceTrajectory | None:
    """Truncate the oldest prediction not younger than the hold window; fall
    back to newer ones when (delay + age) runs past the candidate horizon."""
    eligible = [p for p in predictions if tick - p.tick >= hold_ticks]
    if eligible:  # newest aged-enough prediction first, then newer fallbacks
        ordered = [eligible[-1]] + [p for p in predictions if p.tick > eligible[-1].tick]
    else:
        ordered = list(predictions)
    for rec in ordered:
        t_cut = max((rec.t_d_ticks + tick - rec.tick) * dt_s, dt_pred)
        try:
            return truncate_guidance(rec.candidate, rec.anchor_pose, t_cut,
                                     dt_pred, source_tick=rec.tick)
        except DelayExceedsHorizon:
            continue
    log.delay_exceeded_horizon = True
    return None  # hold the last valid guidance


def _try_predict(cfg, track, predictor, state, state_by_tick, cmd_by_origin,
                 last_cmd_msg, tick, nominal_rt, pred_stride, hist_len,
                 seed) -> PredictionRecord | None:
    """Assemble the delay-aligned history and produce a fresh prediction, or None."""
    t_d_ticks, _ = estimate_round_trip(last_cmd_msg, tick, nominal_rt)

    newest = last_cmd_msg.origin_tick
    origins = [newest - k * pred_stride for k in range(hist_len - 1, -1, -1)]
    states, commands = [], []
    for origin in origins:
        msg = cmd_by_origin.get(origin)
        if msg is None or msg.feedback_echo_tick == ECHO_SENTINEL:
            return None
        st = state_by_tick.get(msg.feedback_echo_tick)
        if st is None:
            return None
        states.append(st)
        c = msg.payload
        commands.append([c.steer, c.throttle, c.brake])
    states = np.array(states)
    commands = np.array(commands)

    anchored = anchor_frame(states)
    cloud = synth_point_cloud(track, state, cfg.sensor, seed=seed * 1_000_003 + tick)
    bev = rasterize(cloud, cfg.bev)
    cands = predictor.predict(anchored, commands, bev,
                              anchor_tick=last_cmd_msg.feedback_echo_tick,
                              anchor_state=states[-1], now_tick=tick,
                              now_state=np.array([state.x, state.y, state.v, state.theta]))
    best = cands.best()
    if float(np.abs(best).max()) < 1e-9:
        return None  # stationary/degenerate prediction: keep the previous guidance

    anchor = states[-1]
    return PredictionRecord(tick=tick, candidate=best,
                            anchor_pose=(anchor[0], anchor[1], anchor[3]),
                            t_d_ticks=t_d_ticks)


def compute_run_metrics(log: RunLog, track: Track) -> RunMetrics:
    """TCT (s), D2C (m^2, |e| integrated over traveled arclength), SE."""
    t = log.column("t_s")
    mean_speed = log.progress_m / t[-1] if len(t) and t[-1] > 0 else 0.0
    if not log.lap_complete:
        return RunMetrics(0.0, 0.0, 0.0, mean_speed, valid=False, reason="timeout")

    e = np.abs(log.column("e_m"))
    s = log.column("s_m")
    ds = np.diff(s)
    half = track.total_length / 2.0
    ds = (ds + half) % track.total_length - half  # unwrap lap crossings
    d2c = float(np.sum(0.5 * (e[1:] + e[:-1]) * ds))
    se = float(np.mean(np.abs(log.column("op_steer"))))
    metrics = RunMetrics(tct=log.lap_time_s, d2c=d2c, se=se, mean_speed=mean_speed, valid=True)
    flag, reason = check_validity(log, track)
    metrics.valid = flag
    metrics.reason = reason
    return metrics


def check_validity(log: RunLog, track: Track,
                   offroad_limit_s: float = 5.0,
                   min_mean_speed: float = 5.0) -> tuple[bool, str]:
    """Off-road for >= 5 s continuously, mean speed below 18 km/h, or an
    incomplete lap invalidates the run. Rollover cannot occur under the
    kinematic model and is recorded as structurally false."""
    if not log.lap_complete:
        return False, "timeout"
    t = log.column("t_s")
    e = np.abs(log.column("e_m"))
    dt = t[1] - t[0] if len(t) > 1 else 0.05
    offroad = e > track.lane_half_width
    run = 0
    for flag in offroad:
        run = run + 1 if flag else 0
        if run * dt >= offroad_limit_s:
            return False, "off-road"
    mean_speed = log.progress_m / t[-1] if t[-1] > 0 else 0.0
    if mean_speed < min_mean_speed:
        return False, "slow"
    return True, ""


def improvement(r_c: float, r_d: float, r_0: float) -> tuple[float, bool]:
    """Per-metric improvement |r_c - r_d| / |r_d - r_0|.

    Returns (value, defined); undefined when the DC mean equals the baseline.
    """
    denom = abs(r_d - r_0)
    if denom == 0.0:
        return 0.0, False
    return abs(r_c - r_d) / denom, True


def improvement_scores(means_ptgc: dict[str, float], means_dc: dict[str, float],
                       means_zero: dict[str, float],
                       significance: dict[str, bool] | None = None) -> dict[str, float | None]:
    """P_D2C / P_TCT / P_SE plus their equal-weight mean P_ove.

    The optional significance gate zeroes flagged metrics before averaging;
    gating decisions come from external statistics, not from this code.
    """
    out: dict[str, float | None] = {}
    gated = []
    for key in ("d2c", "tct", "se"):
        val, defined = improvement(means_ptgc[key], means_dc[key], means_zero[key])
        if not defined:
            out[f"p_{key}"] = None
            continue
        if significance is not None and not significance.get(key, True):
            val = 0.0
        out[f"p_{key}"] = val
        gated.append(val)
    out["p_ove"] = sum(gated) / 3.0 if len(gated) == 3 else None
    return out


@dataclass
class RunResult:
    seed: int
    mode: str
    delay_ms: float
    repeat: int
    metrics: RunMetrics


def _episode_seed(seed: int, repeat: int) -> int:
    return seed * 1000 + repeat


def _run_cell(args) -> RunResult:
    cfg_dict, mode, delay_ms, seed, repeat, predictor = args
    from .config import config_from_dict

    cfg = config_from_dict(cfg_dict)
    track = build_test_track(cfg.track)
    scn = ScenarioConfig(mode=mode, delay_ms=delay_ms, seed=_episode_seed(seed, repeat),
                         predictor=predictor, repeat=repeat)
    log = run_episode(cfg, scn, track=track)
    return RunResult(seed=seed, mode=mode, delay_ms=delay_ms, repeat=repeat,
                     metrics=compute_run_metrics(log, track))


def experiment_batch(cfg: GlobalConfig, predictor: str,
                     delay_levels_ms: list[float] | None = None,
                     modes: tuple[str, ...] = ("dc", "ptgc"),
                     repeats: int | None = None,
                     seeds: list[int] | None = None,
                     workers: int = 1) -> list[RunResult]:
    """Run the full protocol grid. The zero-delay cell always runs DC only
    (it is the benchmark); PTGC runs at every non-zero level."""
    delay_levels_ms = cfg.experiment.delay_levels_ms if delay_levels_ms is None else delay_levels_ms
    repeats = cfg.experiment.repeats if repeats is None else repeats
    seeds = cfg.experiment.seeds if seeds is None else seeds

    jobs = []
    cfg_dict = cfg.to_dict()
    for seed in seeds:
        for delay in delay_levels_ms:
            for mode in modes:
                if delay == 0.0 and mode == "ptgc" and "dc" in modes:
                    continue  # zero delay is the DC benchmark cell only
                for rep in range(repeats):
                    jobs.append((cfg_dict, mode, delay, seed, rep, predictor))

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    return results


def results_csv(results: list[RunResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["seed", "mode", "delay_ms", "repeat", "valid", "reason",
                     "tct_s", "d2c_m2", "se", "mean_speed_mps"])
    for r in results:
        m = r.metrics
        writer.writerow([r.seed, r.mode, f"{r.delay_ms:g}", r.repeat, int(m.valid),
                         m.reason, f"{m.tct:.10g}", f"{m.d2c:.10g}", f"{m.se:.10g}",
                         f"{m.mean_speed:.10g}"])
    return buf.getvalue()


def summarize(results: list[RunResult]) -> dict:
    """Per-(mode, delay) means over valid runs, plus improvement scores
    against the zero-delay DC baseline."""
    cells: dict[tuple[str, float], list[RunMetrics]] = {}
    for r in results:
        if r.metrics.valid:
            cells.setdefault((r.mode, r.delay_ms), []).append(r.metrics)

    means = {}
    for key, ms in cells.items():
        means[key] = {
            "n": len(ms),
            "tct": float(np.mean([m.tct for m in ms])),
            "d2c": float(np.mean([m.d2c for m in ms])),
            "se": float(np.mean([m.se for m in ms])),
            "tct_std": float(np.std([m.tct for m in ms])),
            "d2c_std": float(np.std([m.d2c for m in ms])),
            "se_std": float(np.std([m.se for m in ms])),
        }

    summary = {"cells": {f"{mode}@{delay:g}ms": v for (mode, delay), v in means.items()},
               "improvement": {}}
    base = means.get(("dc", 0.0))
    if base:
        for (mode, delay), cell in means.items():
            if mode != "ptgc":
                continue
            dc = means.get(("dc", delay))
            if dc is None:
                continue
            scores = improvement_scores(cell, dc, base)
            summary["improvement"][f"{delay:g}ms"] = scores
    return summary
