"""Command line entry: ``run``, ``bench`` and ``trace``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError
from . import harness

EXIT_OK, EXIT_CONFIG, EXIT_FAILURES = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="momploc", description="mmWave channel estimation and localization experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run the configured sweep and write metrics.csv / summary.json"),
                       ("bench", "time each solver and K_res on one user"),
                       ("trace", "dump one user's intermediate artifacts")):
        s = sub.add_parser(name, help=text)
        s.add_argument("--config", required=True)
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        if name == "trace":
            s.add_argument("--user", type=int, required=True)
        if name == "bench":
            s.add_argument("--repeats", type=int, default=3)
            s.add_argument("--user", type=int)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = harness.load_config(args.config).with_overrides(args.seed, args.out)
        if args.command == "run":
            rows = harness.run_experiment(cfg)
            summary = harness.write_results(rows, cfg)
            rate = summary["failure_rate"]
            print(f"{len(rows)} rows, failure rate {rate:.3f} -> {cfg.out}")
            return EXIT_FAILURES if rate > cfg.max_failure_rate else EXIT_OK
        if args.command == "bench":
            print(json.dumps(harness.bench(cfg, args.repeats, args.user), indent=1))
            return EXIT_OK
        print(harness.trace_user(cfg, args.user))
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
