"""Command line entry point: ``run``, ``validate`` and ``report``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from ..core import CbASError, ConfigError
from .config import SCENARIOS, load_config
from .records import validate_csv
from .report import format_table, scenario_directories, write_aggregate, aggregate_directory
from .scenarios import run_scenario

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cbas-bench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario and write its CSV/JSON artifacts")
    run.add_argument("--config", required=True, type=Path)
    run.add_argument("--scenario", choices=SCENARIOS, help="override the scenario named in the config")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--out", type=Path, help="override the output directory")
    val = sub.add_parser("validate", help="check a config file without running anything")
    val.add_argument("--config", required=True, type=Path)
    rep = sub.add_parser("report", help="recompute aggregate tables from per-run CSVs")
    rep.add_argument("--in", dest="in_dir", required=True, type=Path)
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load(args):
    config = load_config(args.config)
    changes = {}
    if getattr(args, "scenario", None):
        changes["scenario"] = args.scenario
    if getattr(args, "seed", None) is not None:
        changes["master_seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["out_dir"] = str(args.out)
    return config.replace(**changes) if changes else config


def cmd_run(args) -> int:
    config = _load(args)
    arts = run_scenario(config, out_dir=config.out_dir)
    bad = [(p, problems) for p in arts.files if p.suffix == ".csv" and (problems := validate_csv(p))]
    for path, problems in bad:
        print(f"{path}: {problems[0]}", file=sys.stderr)
    print(f"{arts.scenario}: {len(arts.runs)} runs in {arts.seconds:.1f}s -> {arts.out_dir}")
    return EXIT_RUNTIME if bad else EXIT_OK


def cmd_validate(args) -> int:
    config = _load(args)
    print(f"ok: scenario {config.scenario}, {len(config.seeds)} seeds, methods {', '.join(config.methods)}")
    return EXIT_OK


def cmd_report(args) -> int:
    if not args.in_dir.is_dir():
        raise ConfigError(f"no such directory: {args.in_dir}")
    dirs = scenario_directories(args.in_dir)
    if not dirs:
        raise ConfigError(f"no run directories under {args.in_dir}")
    for d in dirs:
        write_aggregate(d)
        print(f"== {d}")
        print(format_table(aggregate_directory(d)[1]))
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    handler = {"run": cmd_run, "validate": cmd_validate, "report": cmd_report}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CbASError, ValueError, OSError, ArithmeticError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
