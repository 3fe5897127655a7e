"""``rgstat`` command line: one subcommand per experiment kind."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from rgstat.config import load_config
from rgstat.errors import (
    BudgetExceededError,
    ConfigError,
    IncompatibleMeasuresError,
    InvariantViolation,
    NotATreeError,
    OracleError,
)
from rgstat.experiments import COMMANDS, Context

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_INVARIANT = 4

_HELP = {
    "generate": "draw networks, walk them and dump the sampled regions",
    "estimate": "empirical ball-class measures and their distance to a model measure",
    "test": "run the configured test for every seed and walk length",
    "harness": "Type I / Type II error rates over H0 and H1 models",
    "entropy": "walk-down conditional entropy profiles",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rgstat", description="Hypothesis tests on stationary random networks.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=_HELP[name])
        p.add_argument("--config", required=True, type=Path, metavar="PATH")
        p.add_argument("--seed-override", type=int, metavar="INT",
                       help="replace sampler.seed, the base of every derived seed")
        p.add_argument("--out", metavar="DIR", help="output directory (default: output.dir)")
        p.add_argument("--workers", type=int, metavar="INT",
                       help="harness worker processes (default: logical cores)")
        p.add_argument("--radius-budget", type=int, metavar="INT",
                       help="replace sampler.max_radius, the largest ball radius classified")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        loaded = load_config(args.config).with_overrides(args.seed_override, args.radius_budget, args.out)
        if args.workers is not None and args.workers < 1:
            raise ConfigError("must be >= 1", field="--workers")
        ctx = Context(loaded, Path(loaded.config.output.dir), args.workers)
        COMMANDS[args.command](ctx)
    except (ConfigError, IncompatibleMeasuresError, NotATreeError) as exc:
        print(f"rgstat: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceededError as exc:
        print(f"rgstat: budget exceeded at radius {exc.radius}: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (InvariantViolation, OracleError) as exc:
        print(f"rgstat: invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"rgstat: {args.command} wrote {ctx.out}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
