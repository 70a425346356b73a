"""CLI entry point for the condensegan pipeline."""

from __future__ import annotations

import argparse
import sys

from .app import apply_overrides, run_app
from .config import load_config
from .costmodel import FactorSource
from .errors import CondenseError
from .logging_setup import init_logging
from .penalize import Regime, Strategy


def _choices(enum) -> list[str]:
    return [member.value for member in enum]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="condensegan",
        description="Penalized cGAN training, hinge pruning and distillation for U-net generators.",
    )
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, help="run seed (overrides the config file)")
    parser.add_argument("--workdir", help="directory for checkpoints and reports")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG")
    commands = parser.add_subparsers(dest="command", required=True)

    train = commands.add_parser("train", help="stage I: penalized training")
    train.add_argument("--epochs", type=int)
    train.add_argument("--penal-strategy", choices=_choices(Strategy))
    train.add_argument("--regime", choices=_choices(Regime))
    train.add_argument("--factor-source", choices=_choices(FactorSource))
    train.add_argument("--no-penal", action="store_true", help="train the vanilla objective")

    profile = commands.add_parser("profile", help="per-layer cost factors")
    profile.add_argument("--checkpoint")
    profile.add_argument("--source", choices=_choices(FactorSource))
    profile.add_argument("--repeats", type=int)
    profile.add_argument("--warmup", type=int)

    prune = commands.add_parser("prune", help="hinge detection and channel surgery")
    prune.add_argument("--checkpoint")
    prune.add_argument("--min-drop-ratio", type=float)
    prune.add_argument("--manual-keep", action="append", default=[], metavar="layerID=K")
    prune.add_argument("--measure-speedup", action="store_true")

    distill = commands.add_parser("distill", help="stage II: student-teacher fine-tuning")
    distill.add_argument("--student")
    distill.add_argument("--teacher")
    distill.add_argument("--epochs", type=int)

    commands.add_parser("report", help="consolidate reports into bundle.csv")
    commands.add_parser("pipeline", help="train, profile, prune, distill and report")
    return parser


def report_error(exc: BaseException) -> None:
    """One human line and one key=value line on stderr."""
    if isinstance(exc, CondenseError):
        message, kind, details = exc.message, exc.kind, dict(exc.details)
    else:
        message, kind = str(exc), "io"
        details = {"path": exc.filename} if getattr(exc, "filename", None) else {}
    print(f"error: {message}", file=sys.stderr)
    extra = "".join(f" {key}={value}" for key, value in sorted(details.items()))
    print(f"error kind={kind}{extra}", file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    """Run one command and return its exit status."""
    if argv is None:
        argv = sys.argv[1:]
    args = build_parser().parse_args(argv)
    init_logging(args.verbose)
    try:
        config = apply_overrides(load_config(args.config), args)
        return run_app(args, config)
    except (CondenseError, OSError) as exc:
        report_error(exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
