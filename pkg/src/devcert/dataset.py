"""CSV dataset ingestion with a JSON manifest of column kinds and stats.

The manifest declares per-column kind plus normalization statistics, or
points at a training split the statistics are computed from. Loaded points
come back standardized and ready to serve as ball-union centers.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

from .errors import MissingStats, ParseError, SchemaError
from .modelfile import _check_keys, _number
from .types import (
    CategoricalFeature,
    ContinuousFeature,
    FeatureSpace,
    Point,
    standardize_point,
)


@dataclass
class Dataset:
    space: FeatureSpace
    points: list[Point]  # normalized frame
    raw_points: list[tuple]
    labels: list[float] | None = None
    stats_source: str = "manifest"


def load_manifest(path: str, *, base_dir: str | None = None) -> FeatureSpace:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: "
                         f"{exc.msg}") from exc
    space, _ = _manifest_space(doc, path)
    return space


def _manifest_space(doc, path: str) -> tuple[FeatureSpace, str | None]:
    _check_keys(doc, ("columns",), ("training_split", "label_column"),
                f"{path}")
    split = doc.get("training_split")
    split_stats = None
    feats = []
    for i, col in enumerate(doc["columns"]):
        where = f"{path}.columns[{i}]"
        if not isinstance(col, dict) or "kind" not in col or "name" not in col:
            raise SchemaError(f"{where}: needs 'name' and 'kind'")
        if col["kind"] == "continuous":
            _check_keys(col, ("name", "kind"), ("mean", "std", "lo", "hi"),
                        where)
            if "mean" not in col or "std" not in col:
                if split is None:
                    raise MissingStats(
                        f"{where}: no mean/std and no training_split declared")
                if split_stats is None:
                    split_stats = _stats_from_split(split, doc["columns"])
                st = split_stats[col["name"]]
                mean, std = st["mean"], st["std"]
                lo = col.get("lo", st["lo"])
                hi = col.get("hi", st["hi"])
            else:
                mean = _number(col["mean"], where)
                std = _number(col["std"], where)
                lo = col.get("lo")
                hi = col.get("hi")
            feats.append(ContinuousFeature(
                name=col["name"],
                lo=-math.inf if lo is None else float(lo),
                hi=math.inf if hi is None else float(hi),
                mean=mean, std=std))
        elif col["kind"] == "categorical":
            _check_keys(col, ("name", "kind"), ("categories",), where)
            if "categories" not in col:
                if split is None:
                    raise MissingStats(
                        f"{where}: no categories and no training_split declared")
                if split_stats is None:
                    split_stats = _stats_from_split(split, doc["columns"])
                cats = split_stats[col["name"]]["categories"]
            else:
                cats = tuple(col["categories"])
            feats.append(CategoricalFeature(name=col["name"], categories=cats))
        else:
            raise SchemaError(f"{where}: unknown kind {col['kind']!r}")
    return FeatureSpace(tuple(feats)), doc.get("label_column")


def _stats_from_split(split_path: str, columns: list) -> dict:
    rows = _read_csv(split_path)
    header = rows[0]
    body = rows[1:]
    out = {}
    for col in columns:
        name = col["name"]
        if name not in header:
            raise ParseError(f"{split_path}: missing column {name!r}")
        idx = header.index(name)
        vals = [r[idx] for r in body]
        if col["kind"] == "continuous":
            nums = [float(v) for v in vals]
            n = len(nums)
            mean = sum(nums) / n
            var = sum((v - mean) ** 2 for v in nums) / n
            out[name] = {"mean": mean, "std": math.sqrt(var) or 1.0,
                         "lo": min(nums), "hi": max(nums)}
        else:
            seen = []
            for v in vals:
                if v not in seen:
                    seen.append(v)
            out[name] = {"categories": tuple(seen)}
    return out


def _read_csv(path: str) -> list[list[str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise ParseError(f"{path}: empty file")
    return rows


def load_dataset(csv_path: str, manifest_path: str,
                 label_column: str | None = None) -> Dataset:
    """Read points (and optional labels), normalized via manifest stats."""
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {manifest_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{manifest_path}: invalid JSON at line "
                         f"{exc.lineno}: {exc.msg}") from exc
    space, manifest_label = _manifest_space(doc, manifest_path)
    label_column = label_column or manifest_label
    return load_points(csv_path, space, label_column)


def load_points(csv_path: str, space: FeatureSpace,
                label_column: str | None = None) -> Dataset:
    """Read a CSV against an existing feature space (e.g. a model's)."""
    rows = _read_csv(csv_path)
    header, body = rows[0], rows[1:]
    col_idx = {}
    for f in space.features:
        if f.name not in header:
            raise ParseError(f"{csv_path}: missing column {f.name!r}")
        col_idx[f.name] = header.index(f.name)
    label_idx = None
    if label_column is not None:
        if label_column not in header:
            raise ParseError(f"{csv_path}: missing label column "
                             f"{label_column!r}")
        label_idx = header.index(label_column)

    raw_points = []
    points = []
    labels = [] if label_idx is not None else None
    for rno, row in enumerate(body, start=2):
        raw = []
        for f in space.features:
            cell = row[col_idx[f.name]]
            if isinstance(f, ContinuousFeature):
                try:
                    raw.append(float(cell))
                except ValueError as exc:
                    raise ParseError(
                        f"{csv_path}: row {rno}, column {f.name!r}: "
                        f"not a number: {cell!r}") from exc
            else:
                if cell not in f.categories:
                    raise ParseError(
                        f"{csv_path}: row {rno}, column {f.name!r}: "
                        f"unseen category {cell!r}")
                raw.append(cell)
        raw = tuple(raw)
        raw_points.append(raw)
        points.append(standardize_point(space, raw))
        if labels is not None:
            try:
                labels.append(float(row[label_idx]))
            except ValueError as exc:
                raise ParseError(f"{csv_path}: row {rno}: bad label "
                                 f"{row[label_idx]!r}") from exc
    return Dataset(space=space, points=points, raw_points=raw_points,
                   labels=labels)
