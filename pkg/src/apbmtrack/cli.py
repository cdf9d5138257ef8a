"""Command-line entry point: ``apbmtrack {simulate,run,compare,report}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import PROFILES, ExperimentConfig, load_config
from .errors import ApbmTrackError, ConfigError

EXIT_OK, EXIT_RUN_FAILURE, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config (key = value lines)")
    p.add_argument("--out", type=Path, help="output directory (overrides experiment.out_dir)")
    p.add_argument("--seed", type=int, help="base seed (overrides experiment.base_seed)")
    p.add_argument("--profile", choices=sorted(PROFILES), help="scale preset: desk or paper")
    p.add_argument("--workers", type=int, help="parallel Monte-Carlo workers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="apbmtrack", description="APBM tracking benchmark")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("simulate", help="write truth trajectories only"))
    _common(sub.add_parser("run", help="run the Monte-Carlo experiment"))

    p = sub.add_parser("compare", help="median table and ordering checks")
    p.add_argument("sources", nargs="+", type=Path, help="result directories or metrics CSV files")
    p.add_argument("--out", type=Path, help="also write comparison.csv and checks.csv here")

    p = sub.add_parser("report", help="comparison plus PNG figures for a result directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path, help="figure directory (default: run_dir)")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config, args.profile)
    if args.seed is not None:
        cfg = replace(cfg, base_seed=args.seed, truth=replace(cfg.truth, seed=args.seed),
                      settings={**cfg.settings, "experiment.base_seed": args.seed})
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1", key="workers")
        cfg = replace(cfg, workers=args.workers, settings={**cfg.settings, "experiment.workers": args.workers})
    if args.out is not None:
        cfg = replace(cfg, out_dir=args.out, settings={**cfg.settings, "experiment.out_dir": str(args.out)})
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    from . import experiment, report

    try:
        if args.command in ("simulate", "run"):
            cfg = _load(args)
            fn = experiment.simulate_experiment if args.command == "simulate" else experiment.run_experiment
            result = fn(cfg)
            for f in result.failures:
                print(f"run {f['run']} {f['variant'] or 'truth'}: {f['error']}", file=sys.stderr)
            print(f"wrote {result.out_dir}")
            return result.exit_code
        if args.command == "compare":
            table, checks = report.compare(args.sources)
            print(report.format_report(table, checks), end="")
            if args.out:
                report.write_comparison(table, checks, args.out)
            return EXIT_OK
        table, checks = report.compare([args.run_dir])
        out = args.out or args.run_dir
        report.write_comparison(table, checks, out)
        for path in report.render_figures(args.run_dir, out):
            print(f"wrote {path}")
        print(report.format_report(table, checks), end="")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ApbmTrackError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILURE


if __name__ == "__main__":
    sys.exit(main())
