"""Command-line entry point.

    spkver <subcommand> [--config FILE] [--set key=value ...] [--seed N]

Subcommands: gen, train, extract, score, norm, filter, fuse, eval, e2e.
Exit codes: 0 success, 2 usage/config error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import ConfigError, load_config
from .core import NumericalError
from .fileio import DataFormatError

_COMMANDS = {
    "gen": pipeline.cmd_gen,
    "train": pipeline.cmd_train,
    "extract": pipeline.cmd_extract,
    "score": pipeline.cmd_score,
    "norm": pipeline.cmd_norm,
    "filter": pipeline.cmd_filter,
    "fuse": pipeline.cmd_fuse,
    "eval": pipeline.cmd_eval,
    "e2e": pipeline.cmd_e2e,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spkver",
        description="Desk-scale speaker-verification pipeline on synthetic corpora",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        cmd = sub.add_parser(name, help=(fn.__doc__ or "").strip().split("\n")[0])
        cmd.add_argument("--config", default=None, help="key=value config file")
        cmd.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.seed)
        written = _COMMANDS[args.command](cfg)
        for path in written:
            print(f"wrote {path}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
