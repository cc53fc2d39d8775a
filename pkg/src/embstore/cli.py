"""Command-line entry point: ``embstore <subcommand> CONFIG [--out DIR] [--jobs N]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .runner import (Run, run_allocate, run_characterize, run_layout, run_pipeline, run_simulate,
                     run_tune)
from .workload import TraceFormatError, TraceValidationError

COMMANDS = {
    "characterize": run_characterize,
    "layout": run_layout,
    "simulate": run_simulate,
    "tune": run_tune,
    "allocate": run_allocate,
    "pipeline": run_pipeline,
}

EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="embstore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="YAML/JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for independent simulations")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        run = Run.create(cfg, args.out, max(1, args.jobs))
        COMMANDS[args.command](run)
        out = run.finish()
    except (ConfigError, TraceFormatError, TraceValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as e:  # noqa: BLE001
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
