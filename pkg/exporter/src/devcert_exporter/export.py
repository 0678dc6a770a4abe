"""Convert trained estimators into devcert interchange documents.

Supported: sklearn decision trees (classifier/regressor), random forests
(classifier), logistic regression, and Explainable Boosting Machines
without interaction terms. Classifier scores are exported on the
probability scale for trees/forests and as logit-link additive models for
LR/EBM, matching how devcert compares them.

Tree thresholds live in encoded (standardized / one-hot) coordinates and
are mapped back to raw units here; one-hot splits become category-set
splits (the <= 0.5 branch excludes the category, the > 0.5 branch pins it).
"""

from __future__ import annotations

from typing import Any

import numpy as np

from .meta import ContinuousColumn, FeatureMeta

FORMAT_VERSION = 1


class UnsupportedEstimator(ValueError):
    pass


def _document(meta: FeatureMeta, model: dict, name: str, source: str) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "feature_space": meta.feature_space_doc(),
        "model": model,
        "metadata": {"name": name, "source": source},
    }


# ---------------------------------------------------------------------------
# Trees and forests
# ---------------------------------------------------------------------------

def _leaf_probability(tree, node: int) -> float:
    value = tree.value[node]
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1:  # regressor
        return float(arr[0])
    if arr.size == 2:  # binary classifier: probability of class 1
        total = arr.sum()
        return float(arr[1] / total) if total > 0 else 0.5
    raise UnsupportedEstimator(
        "only regressors and binary classifiers are exportable")


def _tree_leaves(estimator, meta: FeatureMeta) -> list[dict]:
    tree = estimator.tree_
    layout = meta.encoded_layout()

    def region_doc(cont_bounds, cat_allowed) -> dict:
        doc = {}
        for col, (lo, hi) in cont_bounds.items():
            entry = {}
            raw_lo = col.mean + col.std * lo if lo is not None else None
            raw_hi = col.mean + col.std * hi if hi is not None else None
            if raw_lo is not None and raw_lo > col.lo:
                entry["lo"] = min(max(raw_lo, col.lo), col.hi)
            if raw_hi is not None and raw_hi < col.hi:
                entry["hi"] = min(max(raw_hi, col.lo), col.hi)
            if entry:
                doc[col.name] = entry
        for col, allowed in cat_allowed.items():
            if allowed != set(col.categories):
                doc[col.name] = {
                    "categories": [c for c in col.categories if c in allowed]}
        return doc

    leaves: list[dict] = []

    def walk(node: int, cont_bounds, cat_allowed):
        if tree.children_left[node] == -1:
            leaves.append({"region": region_doc(cont_bounds, cat_allowed),
                           "value": _leaf_probability(tree, node)})
            return
        feat = int(tree.feature[node])
        thr = float(tree.threshold[node])
        col, category = layout[feat]
        if category is None:
            lo, hi = cont_bounds.get(col, (None, None))
            left = dict(cont_bounds)
            left[col] = (lo, thr if hi is None else min(hi, thr))
            right = dict(cont_bounds)
            right[col] = (thr if lo is None else max(lo, thr), hi)
            walk(int(tree.children_left[node]), left, cat_allowed)
            walk(int(tree.children_right[node]), right, cat_allowed)
        else:
            allowed = cat_allowed.get(col, set(col.categories))
            left = dict(cat_allowed)
            left[col] = allowed - {category}  # one-hot <= 0.5: not this one
            right = dict(cat_allowed)
            right[col] = allowed & {category}
            if left[col]:
                walk(int(tree.children_left[node]), cont_bounds, left)
            if right[col]:
                walk(int(tree.children_right[node]), cont_bounds, right)

    walk(0, {}, {})
    return leaves


def export_tree(estimator, meta: FeatureMeta, name: str = "tree") -> dict:
    """sklearn DecisionTree{Classifier,Regressor} -> decision_tree document."""
    if not hasattr(estimator, "tree_"):
        raise UnsupportedEstimator(f"{type(estimator).__name__} has no tree_")
    model = {"type": "decision_tree", "leaves": _tree_leaves(estimator, meta)}
    return _document(meta, model, name, "sklearn decision tree")


def export_forest(estimator, meta: FeatureMeta, name: str = "forest") -> dict:
    """sklearn RandomForestClassifier -> mean-aggregated tree_ensemble."""
    if not hasattr(estimator, "estimators_"):
        raise UnsupportedEstimator(
            f"{type(estimator).__name__} has no estimators_")
    trees = [{"leaves": _tree_leaves(t, meta)} for t in estimator.estimators_]
    model = {"type": "tree_ensemble", "aggregation": "mean",
             "post_link": "identity", "intercept": 0.0, "trees": trees}
    return _document(meta, model, name, "sklearn random forest")


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------

def export_logreg(estimator, meta: FeatureMeta, name: str = "logreg") -> dict:
    """sklearn LogisticRegression -> all-linear additive model, logit link.

    Coefficients apply to the encoded matrix, so continuous weights are
    rescaled back to raw units (w / std) with the means folded into the
    intercept; one-hot groups become category tables.
    """
    if not hasattr(estimator, "coef_"):
        raise UnsupportedEstimator(f"{type(estimator).__name__} has no coef_")
    coef = np.asarray(estimator.coef_, dtype=float)
    if coef.shape[0] != 1:
        raise UnsupportedEstimator("only binary classifiers are exportable")
    coef = coef[0]
    intercept = float(np.asarray(estimator.intercept_, dtype=float).reshape(-1)[0])
    layout = meta.encoded_layout()
    if len(coef) != len(layout):
        raise UnsupportedEstimator(
            f"coefficient count {len(coef)} does not match the encoded "
            f"layout ({len(layout)} columns)")
    terms: dict[str, dict] = {}
    for w, (col, category) in zip(coef, layout):
        if category is None:
            # encoded column is (x - mean) / std
            terms[col.name] = {"type": "linear", "weight": float(w / col.std)}
            intercept -= w * col.mean / col.std
        else:
            entry = terms.setdefault(col.name,
                                     {"type": "category_table", "values": {}})
            entry["values"][category] = float(w)
    model = {"type": "additive", "intercept": intercept, "link": "logit",
             "terms": terms}
    return _document(meta, model, name, "sklearn logistic regression")


# ---------------------------------------------------------------------------
# Explainable Boosting Machines
# ---------------------------------------------------------------------------

def export_ebm(estimator, meta: FeatureMeta, name: str = "ebm") -> dict:
    """EBM (interpretml) -> piecewise-constant additive model, logit link.

    Reads the documented attribute surface: `term_features_`, `bins_`,
    `term_scores_`, `intercept_`, `link_`. Interaction terms are rejected;
    the additive scope is main effects only. Continuous bin semantics are
    left-closed (a value equal to a cut falls in the upper bin); score
    arrays may carry missing/unseen sentinel slots at the ends, which are
    dropped.
    """
    for attr in ("term_features_", "bins_", "term_scores_", "intercept_"):
        if not hasattr(estimator, attr):
            raise UnsupportedEstimator(
                f"{type(estimator).__name__} lacks EBM attribute {attr!r}")
    link = getattr(estimator, "link_", "logit")
    if link not in ("logit", "identity", "log"):
        raise UnsupportedEstimator(f"unsupported EBM link {link!r}")
    for tf in estimator.term_features_:
        if len(tf) != 1:
            raise UnsupportedEstimator(
                "EBMs with interaction terms are outside the additive scope")
    intercept = float(np.asarray(estimator.intercept_).reshape(-1)[0])
    by_name = {c.name: c for c in meta.columns}
    names = list(getattr(estimator, "feature_names_in_",
                         [c.name for c in meta.columns]))
    terms: dict[str, dict] = {}
    for tf, scores in zip(estimator.term_features_, estimator.term_scores_):
        idx = tf[0]
        fname = names[idx]
        if fname not in by_name:
            raise UnsupportedEstimator(f"EBM feature {fname!r} not in metadata")
        col = by_name[fname]
        scores = np.asarray(scores, dtype=float)
        bins = estimator.bins_[idx][0]
        if isinstance(col, ContinuousColumn):
            cuts = [float(c) for c in np.asarray(bins, dtype=float)]
            values = _strip_sentinels(scores, len(cuts) + 1)
            terms[fname] = {"type": "piecewise_constant",
                            "breakpoints": cuts,
                            "values": [float(v) for v in values]}
        else:
            if not isinstance(bins, dict):
                raise UnsupportedEstimator(
                    f"EBM nominal feature {fname!r} has no category mapping")
            values = {}
            for cat, bin_idx in bins.items():
                if str(cat) not in col.categories:
                    raise UnsupportedEstimator(
                        f"EBM category {cat!r} not in metadata for {fname!r}")
                values[str(cat)] = float(scores[int(bin_idx)])
            terms[fname] = {"type": "category_table", "values": values}
    model = {"type": "additive", "intercept": intercept, "link": link,
             "terms": terms}
    return _document(meta, model, name, "interpretml EBM")


def _strip_sentinels(scores: np.ndarray, n_bins: int) -> np.ndarray:
    if scores.size == n_bins:
        return scores
    if scores.size == n_bins + 2:  # missing at 0, unseen at -1
        return scores[1:-1]
    raise UnsupportedEstimator(
        f"score array of length {scores.size} does not fit {n_bins} bins")


EXPORTERS = {
    "tree": export_tree,
    "forest": export_forest,
    "logreg": export_logreg,
    "ebm": export_ebm,
}


def export_estimator(kind: str, estimator: Any, meta: FeatureMeta,
                     name: str | None = None) -> dict:
    if kind not in EXPORTERS:
        raise UnsupportedEstimator(
            f"unknown kind {kind!r}; expected one of {sorted(EXPORTERS)}")
    if name is None:
        name = kind
    return EXPORTERS[kind](estimator, meta, name=name)
