"""
Command-line front end.

    python main.py <simulate|dataset|train|design|report> --config run.json

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from pydantic import ValidationError

from config.run_config import load_run_config
from config.settings import settings
from logic.errors import ConfigError, FibrilDesignError
from logic.pipeline import COMMANDS, STAGES, RunContext
from logic.runtime import resolve_threads

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fibril-design",
        description="Fibril-array detachment simulation, surrogate training and compliance-grading design",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="run document (JSON)")
        p.add_argument("--output-dir", default=None,
                       help="root of stage outputs (CLI > config > env:FIBRIL_OUTPUT_DIR)")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (CLI > config > env:FIBRIL_MASTER_SEED)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (CLI > config > env:FIBRIL_THREADS)")
        p.add_argument("--log-level", default=None, help="logging level (default env:FIBRIL_LOG_LEVEL)")
    return parser


def _configure_logging(level: Optional[str]):
    level = (level or settings.FIBRIL_LOG_LEVEL).upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )


def _fail(code: int, error: Exception) -> int:
    message = f"error: {type(error).__name__}: {error}"
    logger.error(message)
    print(message, file=sys.stderr)
    return code


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _configure_logging(args.log_level)

    try:
        config, cfg_hash = load_run_config(args.config, overrides={
            "output_dir": args.output_dir,
            "master_seed": args.seed,
            "threads": args.threads,
        })
    except (ConfigError, ValidationError) as e:
        parser.print_usage(sys.stderr)
        return _fail(EXIT_USAGE, e)

    ctx = RunContext(
        config=config,
        config_hash=cfg_hash,
        output_dir=Path(config.output_dir or settings.FIBRIL_OUTPUT_DIR),
        master_seed=settings.FIBRIL_MASTER_SEED if config.master_seed is None else config.master_seed,
        threads=resolve_threads(config.threads),
    )
    logger.info(f"[{args.command.upper()}] config {args.config} (hash {cfg_hash[:12]}), seed {ctx.master_seed}, "
                f"threads {ctx.threads}, output {ctx.output_dir}")

    try:
        COMMANDS[args.command](ctx)
    except ConfigError as e:
        return _fail(EXIT_USAGE, e)
    except FibrilDesignError as e:
        return _fail(EXIT_DOMAIN, e)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
