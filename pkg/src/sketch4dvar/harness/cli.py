"""Command line entry point: ``sketch4dvar run|sweep|verify|report``.

Exit codes: 0 success, 1 solver failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, PRESETS, load_config, preset
from .run import SolverFailure, parse_axes, read_csv, report, run_experiment, sweep

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2


def _resolve(args) -> ExperimentConfig:
    base = preset(args.preset) if args.preset else None
    if getattr(args, "config", None):
        cfg = load_config(args.config, base)
    elif base is not None:
        cfg = base
    else:
        raise ConfigError("give a config file or --preset")
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    if args.workers is not None:
        changes["sketch"] = {"workers": args.workers}
    try:
        return cfg.replace(**changes) if changes else cfg
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _common(p):
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--workers", type=int, default=None, help="parallel workers")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketch4dvar",
                                     description="Sketched preconditioners for 4D-Var experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment")
    p.add_argument("config", nargs="?", help="YAML/JSON config file")
    _common(p)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("config", nargs="?", help="YAML/JSON config file")
    p.add_argument("--axis", action="append", default=[], metavar="NAME=V1,V2,...",
                   help="sweep axis; repeat for a Cartesian product")
    _common(p)

    p = sub.add_parser("verify", help="run the property and oracle test suites")
    p.add_argument("--acceptance", action="store_true", help="also run the acceptance suite")
    p.add_argument("pytest_args", nargs="*")

    p = sub.add_parser("report", help="collate summary tables under a directory")
    p.add_argument("directory")
    return parser


def _verify(args) -> int:
    import pytest

    tests = Path(__file__).resolve().parents[3] / "tests"
    target = [str(tests)] if tests.is_dir() else ["--pyargs", "sketch4dvar"]
    extra = [] if args.acceptance else ["-m", "not acceptance"]
    return EXIT_OK if pytest.main(target + extra + list(args.pytest_args)) == 0 else EXIT_SOLVER


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            return _verify(args)
        if args.command == "report":
            print(report(args.directory))
            return EXIT_OK
        cfg = _resolve(args)
        if args.command == "run":
            art = run_experiment(cfg)
            for name, path in sorted(art.files.items()):
                print(f"{name}: {path}")
            if not art.ok:
                print("solver did not converge", file=sys.stderr)
                return EXIT_SOLVER
            return EXIT_OK
        if not args.axis:
            raise ConfigError("sweep needs at least one --axis")
        axes = parse_axes(args.axis, cfg)
        workers = args.workers or 1
        path = sweep(cfg, axes, workers=workers)
        print(path)
        failed = any(r.get("status", "ok") != "ok" for r in read_csv(path))
        return EXIT_SOLVER if failed else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, ArithmeticError, FloatingPointError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
