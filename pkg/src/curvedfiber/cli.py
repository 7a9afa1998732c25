"""Command-line entry point: run the pipeline or any prefix of it."""

from __future__ import annotations

import argparse
import sys

from .pipeline import ConfigError, StageError, load_config, run_pipeline

_STAGE_HELP = {
    "stress": "ingest or solve the element stress field",
    "psl": "trace principal stress lines and count per-element weights",
    "slice": "solve the guidance field and extract curved layers",
    "paths": "generate per-layer fiber toolpaths",
    "metrics": "evaluate alignment, thickness, and continuity",
    "run": "run every stage end to end",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="curvedfiber",
        description=(
            "Stress-aligned curved-layer slicing and continuous fiber "
            "toolpath generation for tetrahedral solid models."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in _STAGE_HELP.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the YAML config")
        p.add_argument(
            "--out", default=None, help="output directory (overrides config)"
        )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        last = "metrics" if args.command == "run" else args.command
        state = run_pipeline(config, out_dir=args.out, last_stage=last)
    except (ConfigError, StageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for stage, seconds in state.timings.items():
        print(f"{stage}: {seconds:.3f} s")
    print(f"artifacts: {state.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
