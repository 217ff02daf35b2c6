"""Command line entry point: ``rotaprop <subcommand> --config <path>``."""
from __future__ import annotations

import argparse
import logging
import sys

from .harness import SUBCOMMANDS, run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotaprop", description="Rotating-potential propagation lab.")
    parser.add_argument("subcommand", choices=sorted(SUBCOMMANDS))
    parser.add_argument("--config", required=True, help="experiment config (JSON)")
    parser.add_argument("--out", help="output directory (overrides ROTAPROP_OUT and the config)")
    parser.add_argument("--workers", type=int, help="worker threads (overrides ROTAPROP_WORKERS)")
    parser.add_argument("--seed", type=int, help="seed for random test states")
    parser.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    if args.workers is not None and args.workers < 1:
        print("--workers must be >= 1", file=sys.stderr)
        return 64
    return run(args.config, args.subcommand, args.out, args.workers, args.seed)


if __name__ == "__main__":
    sys.exit(main())
