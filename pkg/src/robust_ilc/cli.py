"""Command line entry point.

    robust-ilc validate --config demo.json
    robust-ilc certify  --config demo.json --out out/
    robust-ilc run      --config demo.json --out out/ --seed 3 --format csv,json,plot
    robust-ilc sweep    --config sweep.json --out out/

Exit codes: 0 success, 2 config error, 3 infeasible tightening,
4 certificate violation, 5 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .experiment import (EXIT_CONFIG, EXIT_NUMERIC, emit, exit_code_for, run_experiment,
                         run_sweep)

logger = logging.getLogger("robust_ilc")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="robust-ilc", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb, help_ in (("validate", "check a config and exit"),
                        ("certify", "compute certificates only"),
                        ("run", "run a single experiment"),
                        ("sweep", "run the sweep grid of a config")):
        p = sub.add_parser(verb, help=help_)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("-v", "--verbose", action="store_true")
        if verb != "validate":
            p.add_argument("--out", required=True, help="output directory")
            p.add_argument("--format", default="csv,json", help="comma list of csv, json, plot")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed", "must be non-negative")
            cfg = cfg.with_seed(args.seed)
        if args.verb == "sweep" and cfg.sweep is None:
            raise ConfigError("sweep", "config has no sweep section")
        formats = [] if args.verb == "validate" else [f for f in args.format.split(",") if f]
        bad = set(formats) - {"csv", "json", "plot"}
        if bad:
            raise ConfigError("--format", f"unknown formats {sorted(bad)}")
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.verb == "validate":
        print(f"ok: {args.config} (m={cfg.m}, n={cfg.n}, vertices={cfg.unc.N})")
        return 0

    try:
        if args.verb == "sweep":
            result = run_sweep(cfg)
        else:
            result = run_experiment(cfg, simulate=args.verb == "run", strict=False)
    except Exception as exc:  # anything escaping the per-point isolation
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc) or EXIT_NUMERIC

    for name, secs in result.timings.items():
        logger.info("timing %s %.3fs", name, secs)
    n_warn = 0
    for p in result.points:
        if p.error:
            print(f"point {p.index}: {p.error['stage']} failed: {p.error['kind']}: {p.error['message']}",
                  file=sys.stderr)
        notes = [(None, w) for w in (p.certificate.warnings if p.certificate else [])]
        notes += [(r.seed, w) for r in p.runs for w in r.warnings]
        n_warn += len(notes)
        for seed, w in notes:
            logger.info("point %d seed %s: %s", p.index, seed, w)
    if n_warn and not args.verbose:
        print(f"{n_warn} warning(s) recorded in the report; rerun with -v to list them", file=sys.stderr)
    for path in emit(result, args.out, formats):
        print(path)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
