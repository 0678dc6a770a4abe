"""Shared fixtures: a synthetic income-style dataset, trained estimators,
and an EBM stand-in exposing the documented attribute surface."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest
from sklearn.ensemble import RandomForestClassifier
from sklearn.linear_model import LogisticRegression
from sklearn.tree import DecisionTreeClassifier

from devcert_exporter import FeatureMeta, encode_frame, make_manifest, parse_meta

KINDS = {
    "age": "continuous",
    "hours": "continuous",
    "education": "continuous",
    "occupation": "categorical",
    "marital": "categorical",
}

OCCUPATIONS = ["service", "tech", "trade", "admin"]
MARITALS = ["single", "married", "divorced"]


@pytest.fixture(scope="session")
def frame() -> pd.DataFrame:
    rng = np.random.default_rng(1234)
    n = 800
    age = rng.uniform(18, 80, n).round(1)
    hours = rng.uniform(1, 80, n).round(1)
    education = rng.integers(1, 17, n).astype(float)
    occupation = rng.choice(OCCUPATIONS, n)
    marital = rng.choice(MARITALS, n)
    score = (0.04 * (age - 40) + 0.05 * (hours - 40) + 0.25 * (education - 8)
             + np.where(marital == "married", 1.0, -0.3)
             + np.where(occupation == "tech", 0.8, 0.0)
             + rng.normal(0, 1.0, n))
    label = (score > 0).astype(int)
    return pd.DataFrame({
        "age": age, "hours": hours, "education": education,
        "occupation": occupation, "marital": marital, "label": label,
    })


@pytest.fixture(scope="session")
def meta(frame) -> FeatureMeta:
    return parse_meta(make_manifest(frame, KINDS, label_column="label"))


@pytest.fixture(scope="session")
def encoded(frame, meta):
    return encode_frame(frame, meta)


@pytest.fixture(scope="session")
def labels(frame):
    return frame["label"].to_numpy()


@pytest.fixture(scope="session")
def tree_clf(encoded, labels):
    clf = DecisionTreeClassifier(max_depth=4, random_state=0)
    clf.fit(encoded, labels)
    return clf


@pytest.fixture(scope="session")
def depth2_tree(encoded, labels):
    clf = DecisionTreeClassifier(max_depth=2, random_state=0)
    clf.fit(encoded[:, :2], labels)  # two continuous features only
    return clf


@pytest.fixture(scope="session")
def forest_clf(encoded, labels):
    clf = RandomForestClassifier(n_estimators=10, max_depth=3, random_state=0)
    clf.fit(encoded, labels)
    return clf


@pytest.fixture(scope="session")
def logreg_clf(encoded, labels):
    clf = LogisticRegression(max_iter=2000)
    clf.fit(encoded, labels)
    return clf


class EBMStub:
    """Explainable Boosting Machine stand-in.

    Mirrors the documented attribute surface of a fitted binary EBM with
    main effects only: `feature_names_in_`, `feature_types_in_`, `bins_`
    (per feature: [cut array] for continuous, [category -> 1-based bin
    index] for nominal), `term_features_`, `term_scores_` (with missing and
    unseen sentinel slots at the ends), `intercept_`, `link_`. The stub is
    fitted with one-pass per-feature score tables and carries its own
    prediction code so parity tests have an independent reference.
    """

    def __init__(self, frame, kinds, label_column, max_bins=8, seed=0):
        rng = np.random.default_rng(seed)
        y = frame[label_column].to_numpy().astype(float)
        base = y.mean()
        self.intercept_ = float(np.log(base / (1 - base)))
        self.link_ = "logit"
        self.feature_names_in_ = [c for c in kinds]
        self.feature_types_in_ = ["continuous" if kinds[c] == "continuous"
                                  else "nominal" for c in kinds]
        self.term_features_ = [(i,) for i in range(len(self.feature_names_in_))]
        self.bins_ = []
        self.term_scores_ = []
        resid = y - base
        for name in self.feature_names_in_:
            col = frame[name]
            if kinds[name] == "continuous":
                vals = col.to_numpy().astype(float)
                qs = np.linspace(0, 1, max_bins + 1)[1:-1]
                cuts = np.unique(np.quantile(vals, qs).round(3))
                self.bins_.append([cuts])
                idx = np.searchsorted(cuts, vals, side="right")
                scores = np.zeros(len(cuts) + 3)  # missing + bins + unseen
                for b in range(len(cuts) + 1):
                    mask = idx == b
                    if mask.any():
                        scores[1 + b] = resid[mask].mean() * 2.0
                scores[1:-1] += rng.normal(0, 0.05, len(cuts) + 1)
                self.term_scores_.append(scores)
            else:
                cats = list(dict.fromkeys(str(v) for v in col))
                mapping = {c: i + 1 for i, c in enumerate(cats)}
                self.bins_.append([mapping])
                scores = np.zeros(len(cats) + 2)
                for c, slot in mapping.items():
                    mask = col.astype(str).to_numpy() == c
                    if mask.any():
                        scores[slot] = resid[mask].mean() * 2.0
                self.term_scores_.append(scores)

    def _score_row(self, row) -> float:
        z = self.intercept_
        for i, name in enumerate(self.feature_names_in_):
            scores = self.term_scores_[i]
            bins = self.bins_[i][0]
            v = row[name]
            if self.feature_types_in_[i] == "continuous":
                b = int(np.searchsorted(bins, float(v), side="right"))
                z += scores[1 + b]
            else:
                z += scores[bins[str(v)]]
        return z

    def predict_proba(self, frame):
        zs = np.array([self._score_row(row) for _, row in frame.iterrows()])
        p = 1.0 / (1.0 + np.exp(-zs))
        return np.column_stack([1 - p, p])


@pytest.fixture(scope="session")
def ebm_stub(frame):
    return EBMStub(frame, KINDS, "label")


@pytest.fixture(scope="session")
def random_raw_points(meta):
    """10^3 random raw-unit points inside the metadata bounds."""
    rng = np.random.default_rng(77)
    rows = []
    for _ in range(1000):
        row = {}
        for col in meta.columns:
            if hasattr(col, "categories"):
                row[col.name] = col.categories[rng.integers(len(col.categories))]
            else:
                row[col.name] = float(rng.uniform(col.lo, col.hi))
        rows.append(row)
    return pd.DataFrame(rows)
