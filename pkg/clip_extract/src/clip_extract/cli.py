"""Command line: clip-extract extract --manifest m.json --out features.ubpf"""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractManifest, extract


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="clip-extract",
        description="Encode stimulus images at three blur levels into a UBPF feature cache.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("extract", help="run a batch extraction from a JSON manifest")
    p.add_argument("--manifest", required=True, help="JSON manifest of images and settings")
    p.add_argument("--out", default=None, help="output .ubpf path (overrides manifest)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = ExtractManifest.from_file(args.manifest)
        result = extract(manifest, out_path=args.out)
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    for err in result.errors:
        print(f"failed: {err}", file=sys.stderr)
    print(f"wrote {result.n_written} image(s) at 3 blur levels")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
