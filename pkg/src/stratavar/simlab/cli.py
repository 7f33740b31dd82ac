"""Command-line entry point: ``stratavar {fig1,fig2,fig3,fig4,rankbound} [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from ..partition import CapacityError
from .config import EXPERIMENTS, ConfigError, load_config
from .experiments import run

EXIT_CONFIG = 2
EXIT_CAPACITY = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stratavar", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="CSV destination (default: stdout)")
        p.add_argument("--input", help="embedding CSV to use instead of synthetic data")
        p.add_argument("--header", action="store_true", help="the input CSV has a header row")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    for item in args.set:
        if "=" not in item:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_CONFIG
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.out is not None:
        overrides["output_path"] = args.out
    if args.input is not None:
        overrides["input_path"] = args.input
    if args.header:
        overrides["header"] = "true"
    try:
        cfg = load_config(args.experiment, args.config, overrides)
        table = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except ValueError as exc:
        # Malformed input data is reported like a config problem.
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = table.to_csv(cfg.output_path)
    if cfg.output_path is None:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
