"""``lesionforge`` command line.

Failures print one line ``error[<category>] <message>`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import PRESETS, load_config
from .errors import LesionForgeError
from .pipeline import STAGES, run_pipeline, run_stage

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--out", type=Path, default=Path("run"), help="output directory (default ./run)")
    common.add_argument("--seed", type=int, help="master seed override (unsigned 64-bit)")
    common.add_argument("--workers", type=int, default=1, help="processes for per-image stages")
    common.add_argument("--preset", choices=PRESETS, help="named parameter preset (default desk)")
    parser = argparse.ArgumentParser(prog="lesionforge",
                                     description="Phantom lesion synthesis and evaluation pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("pipeline",):
        sub.add_parser(name, parents=[common])
    return parser


def _setup_logging() -> None:
    level = os.environ.get("LESIONFORGE_LOG", "info").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.INFO), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        if args.workers < 1:
            raise LesionForgeError("--workers must be >= 1")
        cfg = load_config(args.config, args.preset, args.seed)
        if args.command == "pipeline":
            run_pipeline(cfg, args.out, args.workers)
        else:
            run_stage(args.command, cfg, args.out, args.workers)
    except LesionForgeError as exc:
        print(f"error[{exc.category}] {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # last resort: still one line
        logging.getLogger(__name__).debug("unhandled", exc_info=True)
        print(f"error[internal] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
