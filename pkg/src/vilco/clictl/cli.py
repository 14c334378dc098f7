"""Command-line entry point: run experiments, build reports, verify gradients.

Exit codes: 0 success, 2 configuration error, 3 numerical abort (a run that
hit non-finite values, or a failed gradient verification).
"""

from __future__ import annotations

import argparse
import json
import sys

from ..numkit import NumericalError
from .config import ConfigError, ExperimentConfig, load_experiment_config
from .report import emit_report
from .runner import load_result, run_experiment
from .verify import gradcheck_battery


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vilco", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="train a stream and write result files")
    run.add_argument("--config", required=True, help="experiment config JSON")
    run.add_argument("--method", help="override the strategy method")
    run.add_argument("--order-seed", type=int, help="override the task-order seed")
    run.add_argument("--mem-capacity", type=int, help="override the replay capacity")
    run.add_argument("--synthetic", action="store_true",
                     help="force the synthetic source (drops manifest_path)")
    run.add_argument("--out", help="override the output directory")

    rep = sub.add_parser("report", help="aggregate result files into a table")
    rep.add_argument("--in", dest="inputs", nargs="+", required=True,
                     help="run directories or result.json files")
    rep.add_argument("--out", required=True, help="table file (.md or .csv)")

    gc = sub.add_parser("gradcheck", help="finite-difference verification battery")
    gc.add_argument("--configs", type=int, default=50, help="number of random configurations")
    gc.add_argument("--seed", type=int, default=0)
    gc.add_argument("--tol", type=float, default=1e-4, help="relative tolerance")
    return parser


def _apply_run_overrides(args) -> ExperimentConfig:
    try:
        with open(args.config) as fh:
            raw = json.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {args.config}: {err}") from err
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {args.config} is not valid JSON: {err}") from err
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    if args.method is not None:
        raw["method"] = args.method
    if args.order_seed is not None:
        raw["order_seed"] = args.order_seed
    if args.mem_capacity is not None:
        raw.setdefault("strategy", {})["replay_capacity"] = args.mem_capacity
    if args.synthetic:
        if raw.get("synth") is None:
            raise ConfigError("--synthetic given but the config has no synth section")
        raw["manifest_path"] = None
    if args.out is not None:
        raw["out_dir"] = args.out
    return ExperimentConfig.from_json_dict(raw)


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _apply_run_overrides(args)
            result = run_experiment(cfg)
            print(f"completed {result.completed_tasks}/{len(result.task_names)} tasks "
                  f"-> {cfg.out_dir}/result.json")
        elif args.command == "report":
            results = [load_result(p) for p in args.inputs]
            try:
                table = emit_report(results, args.out)
            except ValueError as err:
                raise ConfigError(str(err)) from err
            print(table, end="")
        elif args.command == "gradcheck":
            failures = gradcheck_battery(args.configs, seed=args.seed, tol=args.tol, log=print)
            if failures:
                print(f"{len(failures)} of {args.configs} configurations failed:", file=sys.stderr)
                for f in failures:
                    print(f"  {f}", file=sys.stderr)
                return 3
            print(f"all {args.configs} configurations passed at tol {args.tol:g}")
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
