"""Command-line entry point: run experiments, compare controllers, and
inspect sampling diagnostics of recorded logs.

Exit codes: 0 on success, 1 when a run completes but fails its scenario
criterion (or planning fails), 2 for configuration errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import CONTROLLERS, SCENARIOS, load_config
from .errors import ConfigurationError, PicontrolError
from .harness import (ComparisonTable, ExperimentSpec, compare_controllers,
                      run_experiment)
from .logs import TrajectoryLog

EXIT_OK = 0
EXIT_RUN_FAILED = 1
EXIT_CONFIG = 2


def _add_common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="KEY=VALUE",
                   help="override a config value by dotted path (repeatable)")
    p.add_argument("--scenario", choices=SCENARIOS, help="scenario id")
    p.add_argument("--out-dir", dest="out_dir",
                   help="output directory (default: $PIC_OUT_DIR or ./runs)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="picontrol",
        description="Sampling-based trajectory optimization experiments "
                    "(MPPI, CEM, PI2-CMA)")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment and write its logs")
    _add_common_flags(run)
    run.add_argument("--controller", choices=CONTROLLERS, help="controller id")
    run.add_argument("--seed", type=int, help="master seed")

    cmp_ = sub.add_parser("compare",
                          help="run several controllers/seeds on one scenario")
    _add_common_flags(cmp_)
    cmp_.add_argument("--controllers", default="mppi,smooth_mppi",
                      help="comma-separated controller ids")
    cmp_.add_argument("--seed", type=int, help="single seed")
    cmp_.add_argument("--seeds",
                      help="seed sweep: 'a..b' (inclusive) or 'a,b,c'; adds "
                           "an aggregate row")

    diag = sub.add_parser("diagnose",
                          help="summarize ESS/weight-entropy columns of a log")
    diag.add_argument("log", help="path to a log.csv")
    diag.add_argument("--ess-fraction", type=float, default=0.05,
                      help="flag steps with ESS below this fraction of K")
    return parser


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if ".." in text:
        lo, _, hi = text.partition("..")
        try:
            lo_i, hi_i = int(lo), int(hi)
        except ValueError as err:
            raise ConfigurationError(f"bad --seeds range {text!r}") from err
        if hi_i < lo_i:
            raise ConfigurationError("--seeds range must be increasing")
        return list(range(lo_i, hi_i + 1))
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as err:
        raise ConfigurationError(f"bad --seeds list {text!r}") from err


def cmd_run(args) -> int:
    cfg = load_config(path=args.config, overrides=args.overrides,
                      scenario=args.scenario, controller=args.controller,
                      seed=args.seed, out_dir=args.out_dir)
    spec = ExperimentSpec(config=cfg, out_dir=cfg["out_dir"])
    result = run_experiment(spec)
    print(json.dumps(result.summary, indent=2, sort_keys=True, default=float))
    if result.out_path:
        print(f"logs written to {result.out_path}", file=sys.stderr)
    return EXIT_OK if result.summary.get("success") else EXIT_RUN_FAILED


def cmd_compare(args) -> int:
    controllers = [c.strip() for c in args.controllers.split(",") if c.strip()]
    if len(controllers) < 1:
        raise ConfigurationError("--controllers must name at least one controller")
    seeds = _parse_seeds(args.seeds) if args.seeds else \
        [args.seed if args.seed is not None else None]
    specs = []
    for controller in controllers:
        for seed in seeds:
            cfg = load_config(path=args.config, overrides=args.overrides,
                              scenario=args.scenario, controller=controller,
                              seed=seed, out_dir=args.out_dir)
            specs.append(ExperimentSpec(config=cfg, out_dir=cfg["out_dir"]))
    if len(specs) < 2:
        raise ConfigurationError(
            "compare needs >= 2 runs; give several controllers or seeds")
    table = compare_controllers(specs, aggregate=len(seeds) > 1)
    print(table.to_text())
    out_dir = specs[0].config["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, "comparison.csv")
    table.to_csv(csv_path)
    print(f"comparison written to {csv_path}", file=sys.stderr)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    log = TrajectoryLog.read_csv(args.log)
    if len(log) == 0:
        raise ConfigurationError(f"{args.log}: log has no rows")
    ess = log.column("ess")
    entropy = log.column("weight_entropy")
    if np.all(np.isnan(ess)):
        raise ConfigurationError(
            f"{args.log}: log carries no sampling diagnostics")
    k = float(log.metadata.get("num_samples", "nan"))
    print(f"steps: {len(log)}   samples per step (K): {k:g}")
    print(f"ess      min={np.nanmin(ess):.3f}  mean={np.nanmean(ess):.3f}  "
          f"final={ess[-1]:.3f}")
    print(f"entropy  min={np.nanmin(entropy):.3f}  "
          f"mean={np.nanmean(entropy):.3f}  final={entropy[-1]:.3f}")
    if np.isfinite(k):
        flagged = np.flatnonzero(ess < args.ess_fraction * k)
        if flagged.size:
            print(f"low-ESS steps (< {args.ess_fraction:g} K): "
                  f"{', '.join(map(str, flagged.tolist()))}")
        else:
            print(f"no steps below {args.ess_fraction:g} K")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "compare":
            return cmd_compare(args)
        if args.command == "diagnose":
            return cmd_diagnose(args)
        parser.error(f"unknown command {args.command!r}")
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except PicontrolError as err:
        print(f"run failed: {err}", file=sys.stderr)
        return EXIT_RUN_FAILED
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
