"""Batch command line for the spam-report pipeline.

Credentials are never taken as flags: live adapters read the
``TWEET_API_TOKEN``, ``THREAT_API_KEY``, and ``BULK_SMS_API_KEY``
environment variables. Everything else comes from ``--config`` plus the
overrides below; all sends and lookups stay on fixtures unless explicitly
switched live with ``--live-urls`` / ``--live-sends``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from typing import Optional, Sequence

from . import pipeline

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT_ERROR = 1
EXIT_CONFIG_ERROR = 2

_SUBCOMMANDS = {
    "ingest": pipeline.run_ingest,
    "extract": pipeline.run_extract,
    "classify-train": pipeline.run_classify_train,
    "classify": pipeline.run_classify,
    "resolve-urls": pipeline.run_resolve_urls,
    "enrich": pipeline.run_enrich,
    "cluster": pipeline.run_cluster,
    "stats": pipeline.run_stats,
    "eval": pipeline.run_eval,
    "all": pipeline.run_all,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smsintel",
        description="Collect, extract, enrich, and evaluate SMS spam reports.",
    )
    parser.add_argument("--config", help="flat key = value configuration file")
    parser.add_argument("--out", help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, help="run seed (overrides config)")
    parser.add_argument("--jobs", type=int, help="record-level parallelism cap")
    parser.add_argument("--from", dest="window_from", metavar="DATE",
                        help="inclusive collection window start (RFC 3339)")
    parser.add_argument("--to", dest="window_to", metavar="DATE",
                        help="inclusive collection window end (RFC 3339)")
    parser.add_argument("--live-urls", action="store_true", default=None,
                        help="resolve uncached URLs over the network")
    parser.add_argument("--live-sends", action="store_true", default=None,
                        help="send eval messages through the configured bulk-SMS "
                             "endpoint instead of the simulated carrier")
    parser.add_argument("--data-dir", help="directory overriding bundled data files")
    parser.add_argument("--tld-file", help="suffix list overriding the bundled one")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument(
        "subcommand",
        choices=sorted(_SUBCOMMANDS),
        help="pipeline stage to run ('all' chains them in order)",
    )
    return parser


def _merge_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    config = (
        pipeline.load_config(args.config) if args.config else pipeline.PipelineConfig()
    )
    overrides = {
        "out_dir": args.out,
        "seed": args.seed,
        "jobs": args.jobs,
        "window_from": args.window_from,
        "window_to": args.window_to,
        "live_urls": args.live_urls,
        "live_sends": args.live_sends,
        "data_dir": args.data_dir,
        "tld_file": args.tld_file,
    }
    known = {f.name for f in fields(pipeline.PipelineConfig)}
    for key, value in overrides.items():
        if value is not None and key in known:
            setattr(config, key, value)
    config.validate()
    return config


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = _merge_config(args)
    except pipeline.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    try:
        _SUBCOMMANDS[args.subcommand](config)
    except pipeline.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except pipeline.InputError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
