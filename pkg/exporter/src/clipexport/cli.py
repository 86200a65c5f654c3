"""Command line entry point: ``clip-export MANIFEST [--dry-run]``.

Exit codes: 0 success, 2 manifest error, 3 asset error (missing images,
unusable checkpoint or output directory).
"""

from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import AssetError, ManifestError
from .export import group_histogram, plan_export, run_export
from .manifest import load_manifest


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-export",
        description="Encode an image dataset with a CLIP checkpoint and "
                    "write VLE1 embedding splits plus the PRJ1 projection "
                    "head.")
    parser.add_argument("manifest", help="path to the key = value manifest")
    parser.add_argument("--dry-run", action="store_true",
                        help="validate the manifest and assets, print the "
                             "plan, write nothing")
    parser.add_argument("--version", action="version",
                        version=f"clip-export {__version__}")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest)
        if args.dry_run:
            plans = plan_export(manifest)
            for plan in plans:
                counts = ",".join(str(c) for c in group_histogram(plan.entries))
                print(f"split {plan.name}: {len(plan.entries)} images, "
                      f"groups {counts}")
            print(f"dry run: nothing written to {manifest.out_dir}")
            return 0
        result = run_export(manifest)
        for name, path in result.split_files.items():
            counts = ",".join(str(c) for c in result.group_counts[name])
            print(f"wrote {path} (groups {counts})")
        print(f"wrote {result.head_file}")
        print(f"wrote {result.report_file}")
        return 0
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 2
    except (AssetError, OSError) as exc:
        print(f"asset error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
