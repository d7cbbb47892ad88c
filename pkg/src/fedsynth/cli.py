"""Command-line entry points: run, baseline, sweep, report."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .pipeline import (
    ExperimentConfig,
    RunReport,
    run_baseline,
    run_pipeline,
    run_sweep,
)


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json_file(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    if overrides:
        import dataclasses

        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_run(args) -> int:
    config = _load_config(args)
    report = run_pipeline(config)
    print(f"final accuracy: {report.final_accuracy:.4f}")
    if config.out_dir:
        print(f"artifacts: {config.out_dir}")
    return 0


def _cmd_baseline(args) -> int:
    config = _load_config(args)
    report = run_baseline(config, mode=args.mode)
    print(f"{args.mode} accuracy: {report.final_accuracy:.4f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    if args.axis == "selection":
        values = [v.strip().lower() in ("1", "true", "yes") for v in args.values.split(",")]
    else:
        values = [float(v) for v in args.values.split(",")]
    reports = run_sweep(config, args.axis, values, out_dir=args.out)
    for value, report in zip(values, reports):
        print(f"{args.axis}={value}: accuracy {report.final_accuracy:.4f}")
    return 0


def _cmd_report(args) -> int:
    run_dir = Path(args.run)
    report = RunReport.load(run_dir)
    print(f"mode: {report.mode}   seed: {report.seed}")
    print(f"{'phase':<12} {'accuracy':>9} {'precision':>10} {'recall':>8}")
    for phase, metrics in report.phase_metrics.items():
        print(f"{phase:<12} {metrics['accuracy']:>9.4f} "
              f"{metrics['macro_precision']:>10.4f} {metrics['macro_recall']:>8.4f}")
    per_class_path = run_dir / "per_class.csv"
    with open(per_class_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "precision", "recall"])
        for c, (p, r) in enumerate(zip(report.per_class_precision,
                                       report.per_class_recall)):
            writer.writerow([c, repr(p), repr(r)])
    print(f"per-class metrics written to {per_class_path}")
    if report.alpha_realized is not None:
        realized = ", ".join("-" if a is None else f"{a:.3f}"
                             for a in report.alpha_realized)
        print(f"alpha requested {report.alpha_requested}; realized per client: {realized}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedsynth")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the full five-phase pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None)
    p_run.set_defaults(fn=_cmd_run)

    p_base = sub.add_parser("baseline", help="run a labeled-only or fully supervised baseline")
    p_base.add_argument("--mode", required=True,
                        choices=["fedavg_labeled", "fedavg_sl"])
    p_base.add_argument("--config", required=True)
    p_base.add_argument("--seed", type=int, default=None)
    p_base.add_argument("--out", default=None)
    p_base.set_defaults(fn=_cmd_baseline)

    p_sweep = sub.add_parser("sweep", help="run the pipeline across one config axis")
    p_sweep.add_argument("--axis", required=True,
                         choices=["alpha", "lambda", "gamma", "selection"])
    p_sweep.add_argument("--values", required=True,
                         help="comma-separated values, e.g. 0.2,1.0,2.1")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_report = sub.add_parser("report", help="summarize a finished run directory")
    p_report.add_argument("--run", required=True)
    p_report.set_defaults(fn=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
