"""Command line entry: cfeb-export JOB.json [overrides]."""

from __future__ import annotations

import argparse
import sys

from .errors import ExportError
from .export import export
from .job import load_job


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cfeb-export",
        description="Encode an image dataset and concept vocabulary into a "
                    "CFEB embedding file plus hierarchy manifest.",
    )
    parser.add_argument("job", help="path to an export-job JSON file")
    parser.add_argument("--backbone", help="override the job's backbone id")
    parser.add_argument("--strict", action="store_true",
                        help="fail on the first unreadable image instead of skipping")
    return parser


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        job = load_job(args.job)
        if args.backbone:
            job.backbone = args.backbone
        if args.strict:
            job.strict = True
        result = export(job)
    except ExportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {result.data_path} ({result.n_exported} examples, "
          f"{job.patches} patches, dim {result.embed_dim})")
    print(f"wrote {result.manifest_path}")
    if result.skipped:
        print(f"skipped {len(result.skipped)} unreadable image(s): "
              f"{result.skipped}")
    return 0


def main() -> None:
    sys.exit(run())
