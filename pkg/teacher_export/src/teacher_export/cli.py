"""Command line wrapper; flags mirror the ExportJob fields."""

from __future__ import annotations

import argparse
import json
import sys

from .export import ExportJob, export


def main(argv=None) -> int:
    p = argparse.ArgumentParser(
        prog="teacher-export",
        description="export language-audio teacher embeddings as SALT")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .salt path")
    p.add_argument("--labels", help="comma-separated text anchors "
                                    "(default: labels found in the manifest)")
    p.add_argument("--model", default="stub:0",
                   help='hub id of a pretrained model, or "stub[:seed]"')
    p.add_argument("--device", default="cpu")
    p.add_argument("--batch-size", type=int, default=8, dest="batch_size")
    args = p.parse_args(argv)

    labels = args.labels.split(",") if args.labels else None
    job = ExportJob(manifest=args.manifest, out_path=args.out, labels=labels,
                    model=args.model, device=args.device,
                    batch_size=args.batch_size)
    try:
        summary = export(job)
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
