"""Command-line entry point.

    drivewatch analyze --frames DIR --calib FILE --config FILE \
        [--detections FILE] --out FILE [--overlay-dir DIR] [--seed N]

Exit codes: 0 success, 1 startup error, 2 partial processing failure.
The run summary is printed as a single JSON line on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys

from .config import load_config, with_seed
from .errors import ConfigError
from .pipeline import StartupError, run_pipeline


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drivewatch")
    sub = parser.add_subparsers(dest="command", required=True)

    analyze = sub.add_parser("analyze", help="analyze a numbered frame sequence")
    analyze.add_argument("--frames", required=True, help="directory of numbered .pgm/.ppm frames")
    analyze.add_argument("--calib", required=True, help="calibration file")
    analyze.add_argument("--config", required=True, help="pipeline config file")
    analyze.add_argument("--detections", default=None, help="external detections JSONL")
    analyze.add_argument("--out", required=True, help="events output file (JSONL)")
    analyze.add_argument("--overlay-dir", default=None, help="write overlay PPMs here")
    analyze.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    try:
        config = load_config(args.config)
    except (OSError, ConfigError) as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config = with_seed(config, args.seed)

    try:
        summary = run_pipeline(
            config,
            frames_dir=args.frames,
            calib_path=args.calib,
            out_path=args.out,
            detections_path=args.detections,
            overlay_dir=args.overlay_dir,
        )
    except StartupError as exc:
        print(f"startup error: {exc}", file=sys.stderr)
        return 1

    had_errors = summary.pop("had_errors")
    print(json.dumps(summary, sort_keys=True))
    return 2 if had_errors else 0


if __name__ == "__main__":
    sys.exit(main())
