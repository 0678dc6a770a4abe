"""Feature metadata: the bridge between estimators and the interchange format.

Estimators are assumed trained on the standard encoded design matrix:
continuous columns standardized to (x - mean) / std, categorical columns
expanded in place into one one-hot column per category, in metadata order.
`encoded_layout` reproduces that column layout so exporters can map
estimator internals (tree thresholds, coefficients) back to raw features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass


class MetadataError(ValueError):
    pass


class MissingColumn(MetadataError):
    pass


@dataclass(frozen=True)
class ContinuousColumn:
    name: str
    mean: float
    std: float
    lo: float
    hi: float


@dataclass(frozen=True)
class CategoricalColumn:
    name: str
    categories: tuple[str, ...]


@dataclass(frozen=True)
class FeatureMeta:
    columns: tuple

    def encoded_layout(self):
        """(column index in the encoded matrix) -> (feature, category|None)."""
        layout = []
        for col in self.columns:
            if isinstance(col, ContinuousColumn):
                layout.append((col, None))
            else:
                layout.extend((col, c) for c in col.categories)
        return layout

    def encoded_dim(self) -> int:
        return len(self.encoded_layout())

    def feature_space_doc(self) -> dict:
        feats = []
        for col in self.columns:
            if isinstance(col, ContinuousColumn):
                feats.append({"name": col.name, "kind": "continuous",
                              "lo": col.lo, "hi": col.hi,
                              "mean": col.mean, "std": col.std})
            else:
                feats.append({"name": col.name, "kind": "categorical",
                              "categories": list(col.categories)})
        return {"features": feats}


def load_meta(path: str) -> FeatureMeta:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return parse_meta(doc)


def parse_meta(doc: dict) -> FeatureMeta:
    if "columns" not in doc:
        raise MetadataError("metadata needs a 'columns' list")
    cols = []
    for spec in doc["columns"]:
        name = spec.get("name")
        kind = spec.get("kind")
        if name is None or kind is None:
            raise MetadataError(f"column spec {spec!r} needs name and kind")
        if kind == "continuous":
            for key in ("mean", "std", "lo", "hi"):
                if key not in spec:
                    raise MetadataError(f"column {name!r}: missing {key!r}")
            cols.append(ContinuousColumn(name, float(spec["mean"]),
                                         float(spec["std"]),
                                         float(spec["lo"]), float(spec["hi"])))
        elif kind == "categorical":
            if "categories" not in spec:
                raise MetadataError(f"column {name!r}: missing categories")
            cols.append(CategoricalColumn(name, tuple(spec["categories"])))
        else:
            raise MetadataError(f"column {name!r}: unknown kind {kind!r}")
    return FeatureMeta(tuple(cols))


def make_manifest(frame, kinds: dict, label_column: str | None = None) -> dict:
    """Manifest (and exporter metadata) computed from a training split.

    `kinds` maps column name -> "continuous" | "categorical"; statistics are
    population mean/std, bounds are the observed min/max, category
    vocabularies keep first-seen order.
    """
    columns = []
    for name, kind in kinds.items():
        if name not in frame.columns:
            raise MissingColumn(f"column {name!r} not in the dataframe")
        series = frame[name]
        if kind == "continuous":
            vals = series.astype(float)
            std = float(vals.std(ddof=0))
            columns.append({
                "name": name, "kind": "continuous",
                "mean": float(vals.mean()),
                "std": std if std > 0 else 1.0,
                "lo": float(vals.min()), "hi": float(vals.max()),
            })
        elif kind == "categorical":
            seen = list(dict.fromkeys(str(v) for v in series))
            columns.append({"name": name, "kind": "categorical",
                            "categories": seen})
        else:
            raise MetadataError(f"column {name!r}: unknown kind {kind!r}")
    doc = {"columns": columns}
    if label_column is not None:
        doc["label_column"] = label_column
    return doc


def encode_frame(frame, meta: FeatureMeta):
    """Dataframe -> encoded design matrix (standardized + one-hot)."""
    import numpy as np

    n = len(frame)
    out = np.zeros((n, meta.encoded_dim()))
    k = 0
    for col in meta.columns:
        if col.name not in frame.columns:
            raise MissingColumn(f"column {col.name!r} not in the dataframe")
        if isinstance(col, ContinuousColumn):
            out[:, k] = (frame[col.name].astype(float) - col.mean) / col.std
            k += 1
        else:
            values = [str(v) for v in frame[col.name]]
            for i, v in enumerate(values):
                if v not in col.categories:
                    raise MetadataError(
                        f"row {i}: unseen category {v!r} in {col.name!r}")
                out[i, k + col.categories.index(v)] = 1.0
            k += len(col.categories)
    return out
