"""Command surface: features / masks / query export."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractorUnavailable
from .jobs import ExportJob, export_features, export_masks, export_query


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splat-feature-export",
        description="Extract dense language features, mask proposals, and "
                    "query embeddings into splat-engine containers")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="per-image dense feature maps (TGRF)")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="synthetic:512",
                   help="synthetic:<dim> or clip:<model-id>")
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("masks", help="per-image fine mask proposals (TGRM)")
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="synthetic")
    p.add_argument("--device", default="cpu")

    p = sub.add_parser("query", help="projected text query embedding (TGRQ)")
    p.add_argument("--text", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", default="synthetic:512")
    p.add_argument("--device", default="cpu")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "features":
            summary = export_features(ExportJob(
                args.images, args.out, backend=args.backend,
                device=args.device))
        elif args.command == "masks":
            summary = export_masks(ExportJob(
                args.images, args.out, backend=args.backend,
                device=args.device))
        else:
            export_query(args.text, args.basis, args.out,
                         backend=args.backend, device=args.device)
            print(f"wrote query embedding to {args.out}")
            return 0
    except (ExtractorUnavailable, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {len(summary.written)} files to {args.out}"
          + (f", skipped {len(summary.skipped)}" if summary.skipped else ""))
    return 0 if summary.ok else 1


if __name__ == "__main__":
    sys.exit(main())
