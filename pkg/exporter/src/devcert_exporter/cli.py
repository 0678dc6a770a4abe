"""devcert-export: pickled estimator + feature metadata -> interchange JSON."""

from __future__ import annotations

import argparse
import json
import pickle
import sys

from .export import EXPORTERS, UnsupportedEstimator, export_estimator
from .meta import MetadataError, load_meta


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="devcert-export",
        description="Convert a trained estimator into a devcert model file.")
    p.add_argument("--kind", required=True, choices=sorted(EXPORTERS))
    p.add_argument("--in", dest="in_path", required=True,
                   help="pickled estimator")
    p.add_argument("--meta", required=True, help="feature metadata JSON")
    p.add_argument("--out", required=True, help="output model JSON")
    p.add_argument("--name", default=None, help="model name for metadata")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.in_path, "rb") as fh:
            estimator = pickle.load(fh)
        meta = load_meta(args.meta)
        doc = export_estimator(args.kind, estimator, meta, name=args.name)
    except (UnsupportedEstimator, MetadataError, OSError,
            pickle.UnpicklingError) as exc:
        print(f"devcert-export: {exc}", file=sys.stderr)
        return 1
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
