"""
mgdfl - Entry point.

Usage:
    python -m mgdfl generate  [--config PATH] [--seed N] [--out DIR]
    python -m mgdfl train     --dataset DIR [--checkpoint CKPT] [--mode MODE] ...
    python -m mgdfl simulate  --dataset DIR --checkpoint CKPT [--day D] [--policy P] ...
    python -m mgdfl benchmark --dataset DIR --checkpoint CKPT [--checkpoint ...] ...

Exit codes: 0 ok, 1 config error, 2 infeasibility, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from mgdfl.config import FEEDER_CHOICES, RunConfig
from mgdfl.data import STEPS_PER_DAY, generate, read_dayset, write_dayset
from mgdfl.errors import EXIT_OK, ConfigError, exit_code_for
from mgdfl.forecast import MODES
from mgdfl.online.benchmark import (
    DayJob, run_benchmark, summarize, summarize_subsets, timing_table,
)
from mgdfl.online.policies import POLICIES, create_policy
from mgdfl.online.simulator import ModelForecaster, run_day
from mgdfl.protocol import (
    CURVE_COLUMNS, OPERATION_COLUMNS, SERIES_COLUMNS, TIMING_COLUMNS, load_checkpoint,
    save_checkpoint, write_json, write_rows,
)
from mgdfl.training import build_model, build_samples, forecast_report, rolling_models, train

log = logging.getLogger(__name__)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _test_days(cfg: RunConfig, days: int, limit: int | None = None) -> list[int]:
    first = min(cfg.train.train_days, days - 1)
    chosen = list(range(max(first, 1), days))
    return chosen[:limit] if limit else chosen


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_generate(args: argparse.Namespace, cfg: RunConfig) -> None:
    ds = generate(cfg.synthetic)
    manifest = {"seed": cfg.synthetic.seed, "config_hash": cfg.hash(),
                "synthetic": cfg.to_dict()["synthetic"]}
    files = write_dayset(ds, _out_dir(cfg), manifest)
    log.info("Wrote %d day files to %s", len(files), cfg.output_dir)


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> None:
    ds = read_dayset(args.dataset)
    tc = cfg.train
    last = min(tc.train_days, ds.days)
    out = _out_dir(cfg)
    history = []
    if args.checkpoint:
        model, header = load_checkpoint(args.checkpoint[0])
        history = list(header.get("curve", []))
        log.info("Resuming %s after %d epoch(s)", args.checkpoint[0], len(history))
    else:
        model = build_model(tc, ds.load[:last * STEPS_PER_DAY])
    samples = build_samples(ds, cfg, 0, last)
    result = train(model, samples, tc, history)
    save_checkpoint(out / "model.ckpt", result.model, mode=tc.mode, epochs=len(result.curve),
                    curve=result.curve, config_hash=cfg.hash(), seed=tc.seed)
    write_rows(out / "curves.csv", result.curve, CURVE_COLUMNS)
    report = forecast_report(result.model, ds, _test_days(cfg, ds.days), tc.kappa)
    write_json(out / "metrics.json", report)
    log.info("Training finished in %.1fs; held-out PICP=%s", result.seconds,
             report["all"].get("picp"))


def _day_context(cfg: RunConfig, ds, day: int, network):
    renewables = ds.day_renewables(day)
    mg = cfg.build_microgrid(renewables, start_step=0, network=network)
    history = ds.load[:day * STEPS_PER_DAY]
    timestamps = ds.timestamps[day * STEPS_PER_DAY:(day + 1) * STEPS_PER_DAY]
    return mg, ds.day_load(day).values, history, timestamps


def cmd_simulate(args: argparse.Namespace, cfg: RunConfig) -> None:
    if not args.checkpoint:
        raise ConfigError("simulate needs --checkpoint")
    ds = read_dayset(args.dataset)
    day = args.day if args.day is not None else _test_days(cfg, ds.days)[0]
    if not 1 <= day < ds.days:
        raise ConfigError(f"day {day} out of range 1..{ds.days - 1}")
    model, _ = load_checkpoint(args.checkpoint[0])
    mg, realized, history, timestamps = _day_context(cfg, ds, day, cfg.build_network())
    forecaster = ModelForecaster(model, history, timestamps, cfg.train.kappa)
    policy = create_policy(cfg.policy, cfg.rtro)
    oplog = run_day(policy, mg, realized, forecaster, rtro=cfg.rtro, tsro=cfg.tsro,
                    seed=cfg.seed, day=day)
    out = _out_dir(cfg)
    write_rows(out / "operation.csv", oplog.operation_rows(), OPERATION_COLUMNS)
    write_rows(out / "series.csv", oplog.series_rows(), SERIES_COLUMNS)
    write_rows(out / "timing.csv", oplog.timing_rows(), TIMING_COLUMNS)
    write_json(out / "operation.json", dict(oplog.to_dict(), config_hash=cfg.hash()))
    log.info("Wrote operation log for day %d (%s) to %s", day, policy.name, out)


def cmd_benchmark(args: argparse.Namespace, cfg: RunConfig) -> None:
    ds = read_dayset(args.dataset)
    days = _test_days(cfg, ds.days, args.days)
    if not days:
        raise ConfigError("no test days to benchmark")
    if args.rolling:
        label = f"rolling-{cfg.mode}"
        per_day = rolling_models(ds, cfg, days)
        methods = {label: per_day}
    else:
        if not args.checkpoint:
            raise ConfigError("benchmark needs --checkpoint (or --rolling)")
        methods = {}
        for path in args.checkpoint:
            model, _ = load_checkpoint(path)
            methods[Path(path).stem] = {d: model for d in days}
    feeders = args.feeder or [cfg.feeder]
    policies = args.policy or sorted(POLICIES)

    jobs = []
    for feeder in feeders:
        network = cfg.build_network(feeder)
        for day in days:
            mg, realized, history, timestamps = _day_context(cfg, ds, day, network)
            for method, models in methods.items():
                forecaster = ModelForecaster(models[day], history, timestamps, cfg.train.kappa)
                for policy in policies:
                    jobs.append(DayJob(method, policy, feeder, day, ds.labels[day], mg,
                                       realized, forecaster, seed=cfg.seed + day))
    results, timing = run_benchmark(jobs, cfg.rtro, cfg.tsro, workers=args.workers or 1)
    out = _out_dir(cfg)
    results.to_csv(out / "days.csv", index=False)
    summarize(results).to_csv(out / "summary.csv", index=False)
    summarize_subsets(results).to_csv(out / "summary_subsets.csv", index=False)
    timing_table(timing).to_csv(out / "summary_timing.csv", index=False)
    log.info("Benchmark of %d run(s) written to %s", len(jobs), out)


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "benchmark": cmd_benchmark,
}


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mgdfl", description="CVaR-guided decision-focused "
                                     "forecasting and risk-triggered microgrid dispatch")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="RunConfig JSON document")
        p.add_argument("--seed", type=int, help="Override every seed")
        p.add_argument("--out", help="Output directory")
        p.add_argument("--mode", choices=MODES, help="Training mode")
        p.add_argument("--workers", type=int, help="Thread pool size")
        p.add_argument("--debug", action="store_true", help="Enable debug logging")
        if name == "generate":
            continue
        p.add_argument("--dataset", required=True, help="Directory written by generate")
        p.add_argument("--checkpoint", action="append",
                       help="Model checkpoint (repeatable for benchmark)")
        if name == "simulate":
            p.add_argument("--day", type=int, help="Day index to operate")
            p.add_argument("--policy", choices=sorted(POLICIES))
            p.add_argument("--feeder", choices=FEEDER_CHOICES)
        elif name == "benchmark":
            p.add_argument("--policy", choices=sorted(POLICIES), action="append")
            p.add_argument("--feeder", choices=FEEDER_CHOICES, action="append")
            p.add_argument("--days", type=int, help="Limit the number of test days")
            p.add_argument("--rolling", action="store_true",
                           help="Retrain on the previous train.rolling_days days per test day")
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    policy = getattr(args, "policy", None)
    feeder = getattr(args, "feeder", None)
    return cfg.with_overrides(
        seed=args.seed, output_dir=args.out, mode=args.mode, workers=args.workers,
        policy=policy if isinstance(policy, str) else None,
        feeder=feeder if isinstance(feeder, str) else None,
    )


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.debug else logging.INFO,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )

    try:
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
    except Exception as exc:
        log.exception("%s failed: %s", args.command, exc)
        return exit_code_for(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
