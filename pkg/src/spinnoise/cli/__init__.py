"""Command-line interface: ``spinnoise simulate|fit|budget|report|selftest``.

Exit codes: 0 ok, 1 config, 2 I/O, 3 estimation, 4 selftest failure.
"""

from __future__ import annotations

import argparse
import sys

from ..errors import InvalidArgument
from ..rng import MAX_SEED
from . import commands
from .commands import (
    EXIT_CONFIG,
    EXIT_IO,
    EXIT_OK,
    EXIT_SELFTEST,
    CommandError,
    with_overrides,
)
from .config import MODES, ConfigError, load_config
from .selftest import run_selftest


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= MAX_SEED:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spinnoise", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=MODES)
    parser.add_argument("--config", help="run configuration file")
    parser.add_argument("--seed", type=_seed, help="master seed (overrides the config)")
    parser.add_argument("--out", help="output file (directory for report)")
    parser.add_argument("--format", choices=("csv", "json"))
    parser.add_argument("--input", help="dataset or variance-table file")
    parser.add_argument("--fit", help="fit result file (report)")
    parser.add_argument("--inject-v1", type=float, help=argparse.SUPPRESS)
    return parser


def _selftest(seed: int, inject, out) -> int:
    checks = run_selftest(seed, inject_per_atom_variance=inject)
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}", file=out)
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} checks passed", file=out)
    return EXIT_OK if failed == 0 else EXIT_SELFTEST


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if cfg.mode is not None and cfg.mode != args.command:
            raise ConfigError(f"config mode {cfg.mode!r} does not match command {args.command!r}", args.config)
        cfg = with_overrides(
            cfg, seed=args.seed, out=args.out, fmt=args.format, input=args.input, fit=args.fit
        )
        if args.command == "selftest":
            return _selftest(args.seed or 0, args.inject_v1, out)
        handler = getattr(commands, f"cmd_{args.command}")
        return handler(cfg, out=out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except CommandError as exc:
        print(f"error: {exc}", file=err)
        return exc.code
    except OSError as exc:
        print(f"I/O error: {exc}", file=err)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
