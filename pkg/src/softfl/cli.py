"""Command-line entry point.

    softfl CONFIG [--out DIR] [--mode fedsoft|ifca|fedem|theorem5]
                  [--data-seed N] [--init-seed N] [--selection-seed N]
                  [--jobs N] [--figures] [--echo-config]
    softfl --verify
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import ALGORITHMS, format_config, parse_config
from .core import ConfigurationError

OUTPUT_ENV = "SOFTFL_OUTPUT_DIR"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="softfl", description="Soft clustered federated learning simulator")
    p.add_argument("config", nargs="?", help="experiment config file (flat key = value)")
    p.add_argument("--out", help=f"output directory (default: ${OUTPUT_ENV} or ./softfl-out)")
    p.add_argument("--mode", choices=ALGORITHMS, help="override the config's algorithm")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--init-seed", type=int)
    p.add_argument("--selection-seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="parallel workers for sweeps")
    p.add_argument("--figures", action="store_true", help="render PNG figures next to each trace")
    p.add_argument("--echo-config", action="store_true", help="print the resolved config(s) and exit")
    p.add_argument("--verify", action="store_true", help="run the built-in property checks and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _verify() -> int:
    from .verify import run_checks

    failed = 0
    for name, ok, detail in run_checks():
        print(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else ""))
        failed += not ok
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.verify:
        return _verify()
    if not args.config:
        print("softfl: a config path is required (or pass --verify)", file=sys.stderr)
        return 2
    overrides = {
        "algorithm": args.mode,
        "data_seed": args.data_seed,
        "init_seed": args.init_seed,
        "selection_seed": args.selection_seed,
    }
    try:
        parsed = parse_config(args.config)
        runs = parsed.runs(**overrides)
    except ConfigurationError as exc:
        print(f"softfl: config error: {exc}", file=sys.stderr)
        return 2
    if args.echo_config:
        for label, spec in runs:
            if len(runs) > 1:
                print(f"# {label}")
            print(format_config(spec.to_dict()), end="")
        return 0

    from .runner import run_config

    out_dir = Path(args.out or os.environ.get(OUTPUT_ENV) or "softfl-out")
    try:
        entries = run_config(parsed, out_dir, jobs=args.jobs, figures=args.figures, **overrides)
    except OSError as exc:
        print(f"softfl: I/O error: {exc}", file=sys.stderr)
        return 1
    bad = [e for e in entries if e["status"] != "ok"]
    for e in entries:
        print(f"{e['status']:>18}  {e['label']}  {e['outputs']['summary']}")
    return 3 if bad else 0


if __name__ == "__main__":
    sys.exit(main())
