"""``fdfa`` command line: one subcommand per study.

    fdfa train --config run.cfg --seed 3 --out train.csv lr=3e-4 epochs=2

Trailing ``key=value`` arguments override entries of the config file.
"""
from __future__ import annotations

import argparse
import sys

from .experiments import (
    ConfigError,
    load_config,
    run_alignment_scan,
    run_noise_sweep,
    run_train,
    run_variance_scan,
)
from .core import ShapeError

COMMANDS = {
    "train": run_train,
    "variance-scan": run_variance_scan,
    "alignment-scan": run_alignment_scan,
    "noise-sweep": run_noise_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdfa", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat 'key = value' configuration file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", required=True, help="CSV file to write")
        p.add_argument("overrides", nargs="*", metavar="key=value")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, seed=args.seed, out=args.out)
        COMMANDS[args.command](cfg)
    except (ConfigError, ShapeError, OSError) as exc:
        print(f"fdfa {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {cfg.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
