"""Command-line entry point: dataset generation, training, evaluation,
single runs, and experiment batches.

Exit codes: 0 ok, 2 usage, 3 config, 4 io, 5 runtime.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from .config import (ConfigError, GlobalConfig, config_from_dict, iter_config_keys,
                     load_config)
from .dataset import Dataset, build_records, load_dataset, save_dataset, split_indices
from .harness import (ScenarioConfig, experiment_batch, results_csv, run_episode,
                      summarize)
from .model import read_manifest, save_model
from .track import build_test_track
from .training import (ctra_predict_fn, evaluate_ade_fde, fde_histogram,
                       model_predict_fn, train)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_RUNTIME = 5


def _config_epilog() -> str:
    lines = ["config keys (JSON sections, defaults shown):"]
    for key, default in iter_config_keys():
        lines.append(f"  {key} = {default!r}")
    return "\n".join(lines)


def _load_cfg(args) -> GlobalConfig:
    cfg = load_config(args.config) if args.config else GlobalConfig()
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ConfigError(f"--set key must be section.key, got {dotted!r}")
        section, key = dotted.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        overlay = cfg.to_dict()
        if section not in overlay:
            raise ConfigError(f"unknown config section {section!r}")
        overlay[section][key] = value
        cfg = config_from_dict(overlay)
    return cfg


def _episode_operator(cfg: GlobalConfig, rng: np.random.Generator, seed: int):
    """Vary operator style across data-collection episodes."""
    return dataclasses.replace(
        cfg.operator,
        seed=seed,
        target_speed_base_mps=cfg.operator.target_speed_base_mps * rng.uniform(0.8, 1.2),
        curvature_slowdown_gain=cfg.operator.curvature_slowdown_gain * rng.uniform(0.75, 1.5),
        preview_time_s=cfg.operator.preview_time_s * rng.uniform(0.85, 1.25),
        noise_std_steer=0.02,
        wander_amp_m=rng.uniform(0.8, 1.8),
        wander_dwell_s=rng.uniform(2.0, 4.5),
        disturb_std_steer=rng.uniform(0.03, 0.08),
        disturb_corr_s=rng.uniform(0.4, 1.0),
    )


def cmd_gen_data(args) -> int:
    cfg = _load_cfg(args)
    if args.episodes <= 0:
        print("error: --episodes must be positive", file=sys.stderr)
        return EXIT_USAGE
    track = build_test_track(cfg.track)
    rng = np.random.default_rng(args.seed)
    records = []
    skipped = 0
    for ep in range(args.episodes):
        ep_seed = args.seed * 10_000 + ep
        ep_cfg = dataclasses.replace(cfg, operator=_episode_operator(cfg, rng, ep_seed))
        scn = ScenarioConfig(mode="dc", delay_ms=0.0, seed=ep_seed,
                             start_s_m=float(rng.uniform(0.0, track.total_length)),
                             start_e_m=float(rng.uniform(-2.0, 2.0)),
                             start_heading_rad=float(rng.uniform(-0.15, 0.15)),
                             steer_bias_std=float(rng.uniform(0.10, 0.25)),
                             steer_bias_corr_s=float(rng.uniform(0.3, 0.8)))
        log = run_episode(ep_cfg, scn, track=track)
        states = np.column_stack([log.column("x"), log.column("y"),
                                  log.column("v"), log.column("theta")])
        commands = np.column_stack([log.column("op_steer"), log.column("op_throttle"),
                                    log.column("op_brake")])
        ticks = log.column("tick")
        recs = build_records(states, commands, ticks, track, cfg.pred, cfg.sensor,
                             cfg.bev, cloud_seed_base=ep_seed * 1_000_003)
        if not recs:
            skipped += 1
            continue
        records.extend(recs)
    if not records:
        print("error: no valid episodes produced records", file=sys.stderr)
        return EXIT_RUNTIME
    ds = Dataset(records=records, history_steps=cfg.pred.history_steps,
                 horizon_steps=cfg.pred.horizon_steps, grid_side=cfg.bev.grid_side)
    save_dataset(ds, args.out)
    tr, va, te = split_indices(len(records), cfg.train.seed)
    print(f"wrote {len(records)} records to {args.out} "
          f"(split 3:1:1 -> {len(tr)}/{len(va)}/{len(te)}; "
          f"{skipped} episodes too short)")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    ds = load_dataset(args.data)
    if ds.horizon_steps != cfg.pred.horizon_steps or ds.history_steps != cfg.pred.history_steps:
        print("error: dataset window does not match pred.history_steps/horizon_steps",
              file=sys.stderr)
        return EXIT_RUNTIME
    flags = {"mc": (True, True), "m": (True, False), "c": (False, True)}[args.mode]
    hyper = dataclasses.replace(cfg.train, epochs=args.epochs or cfg.train.epochs,
                                seed=args.seed)

    def progress(epoch, tl, vl):
        print(f"epoch {epoch}: train_loss={tl:.4f} val_loss={vl:.4f}")

    model, curve = train(ds, cfg.pred, hyper, motion_on=flags[0], context_on=flags[1],
                         progress=progress if args.verbose else None)
    save_model(model, args.model_out)
    curve_path = args.curve_out or str(Path(args.model_out).with_suffix(".curve.csv"))
    with open(curve_path, "w", encoding="utf-8") as fh:
        fh.write("epoch,train_loss,val_loss\n")
        for ep, tl, vl in zip(curve.epochs, curve.train_loss, curve.val_loss):
            fh.write(f"{ep},{tl:.10g},{vl:.10g}\n")
    print(f"wrote model to {args.model_out}, curve to {curve_path}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    ds = load_dataset(args.data)
    _, _, idx_test = split_indices(len(ds.records), args.seed)
    test = [ds.records[i] for i in idx_test]
    horizons = tuple(h for h in (0.5, 1.0, 2.0)
                     if round(h / cfg.pred.dt_pred_s) <= ds.horizon_steps)

    evaluators = [("ctra", ctra_predict_fn(cfg.pred))]
    for path in args.model or []:
        meta, _ = read_manifest(path)
        label = {(True, True): "mc", (True, False): "m", (False, True): "c"}[
            (meta["motion_on"], meta["context_on"])]
        from .model import load_model

        evaluators.append((label, model_predict_fn(load_model(path), ds.grid_side)))

    print("model,horizon_s,ade_m,fde_m")
    for label, fn in evaluators:
        table = evaluate_ade_fde(fn, test, cfg.pred.dt_pred_s, horizons)
        for h in horizons:
            ade, fde = table[h]
            print(f"{label},{h:g},{ade:.4f},{fde:.4f}")
    if 1.0 in horizons:
        print("model,fde_threshold_m,fraction_exceeding")
        for label, fn in evaluators:
            hist = fde_histogram(fn, test, cfg.pred.dt_pred_s, 1.0)
            for thr, frac in hist.items():
                print(f"{label},{thr:g},{frac:.4f}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_cfg(args)
    scn = ScenarioConfig(mode=args.mode, delay_ms=args.delay, seed=args.seed,
                         predictor=args.predictor)
    log = run_episode(cfg, scn)
    Path(args.out).write_text(log.to_csv(), encoding="utf-8")
    from .harness import compute_run_metrics

    track = build_test_track(cfg.track)
    m = compute_run_metrics(log, track)
    print(f"wrote {args.out}: lap_complete={log.lap_complete} valid={m.valid} "
          f"reason={m.reason or '-'} tct={m.tct:.2f}s d2c={m.d2c:.2f}m2 se={m.se:.4f}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cfg = _load_cfg(args)
    results = experiment_batch(
        cfg, predictor=args.predictor,
        delay_levels_ms=[float(d) for d in args.delays] if args.delays else None,
        repeats=args.repeats, seeds=[int(s) for s in args.seeds] if args.seeds else None,
        workers=args.workers)
    Path(args.out).write_text(results_csv(results), encoding="utf-8")
    summary = summarize(results)
    summary_path = args.summary_out or str(Path(args.out).with_suffix(".summary.json"))
    Path(summary_path).write_text(json.dumps(summary, indent=2), encoding="utf-8")
    print(f"wrote {len(results)} runs to {args.out}, summary to {summary_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptgc-sim",
        description="Deterministic teleoperation simulator with predicted-trajectory "
                    "guidance control and delay emulation.",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config key (flags win over the file)")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gen-data", help="run zero-delay episodes and build a dataset")
    common(p)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train a prediction model variant")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--mode", choices=["mc", "m", "c"], default="mc")
    p.add_argument("--epochs", type=int)
    p.add_argument("--curve-out")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="ADE/FDE table on the test split (CTRA + models)")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--model", action="append", help="model file (repeatable)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("run", help="run a single episode and write its RunLog CSV")
    common(p)
    p.add_argument("--mode", choices=["dc", "ptgc"], required=True)
    p.add_argument("--delay", type=float, default=0.0, help="round-trip delay in ms")
    p.add_argument("--predictor", default="ctra", help="'ctra' or a model file path")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("experiment", help="run the delay x mode protocol grid")
    common(p)
    p.add_argument("--predictor", required=True, help="'ctra' or a model file path")
    p.add_argument("--delays", nargs="*", help="delay levels in ms")
    p.add_argument("--repeats", type=int)
    p.add_argument("--seeds", nargs="*")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True)
    p.add_argument("--summary-out")
    p.set_defaults(fn=cmd_experiment)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
