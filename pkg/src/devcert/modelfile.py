"""Model interchange files: strict JSON schema, raw->normalized conversion.

A model file is a single JSON document carrying its own feature space with
normalization statistics, so two files are comparable iff their feature
spaces are identical; train/serve schema drift surfaces as a hard error.
Payload values (thresholds, breakpoints, region bounds) are stored in raw
feature units; `normalize_model` produces the standardized-frame model the
certifiers consume.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import ParseError, SchemaError, VersionError
from .models import (
    AdditiveModel,
    CategoryTableTerm,
    Condition,
    DecisionTree,
    Leaf,
    LinearTerm,
    Model,
    PiecewiseConstantTerm,
    Rule,
    RuleEnsemble,
    RuleList,
    TreeEnsemble,
    WeightedRule,
    validate_tree_partition,
)
from .types import (
    Box,
    CategoricalFeature,
    CategorySet,
    ContinuousFeature,
    FeatureSpace,
    Interval,
)
from .errors import AssumptionViolated, SchemaMismatch

FORMAT_VERSION = 1

MODEL_TYPES = ("decision_tree", "rule_list", "additive", "tree_ensemble",
               "rule_ensemble")


@dataclass
class ModelFile:
    space: FeatureSpace
    model: Model  # raw-frame payload
    model_type: str
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def _check_keys(obj: dict, required: tuple, optional: tuple, where: str) -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object")
    for key in required:
        if key not in obj:
            raise SchemaError(f"{where}: missing required field {key!r}")
    for key in obj:
        if key not in required and key not in optional:
            raise SchemaError(f"{where}: unknown field {key!r}")


def _number(obj, where: str, allow_none: bool = False) -> float | None:
    if obj is None and allow_none:
        return None
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise SchemaError(f"{where}: expected a number, got {obj!r}")
    return float(obj)


# ---------------------------------------------------------------------------
# Feature space
# ---------------------------------------------------------------------------

def _parse_space(doc: Any) -> FeatureSpace:
    _check_keys(doc, ("features",), (), "feature_space")
    feats = []
    for i, f in enumerate(doc["features"]):
        where = f"feature_space.features[{i}]"
        if not isinstance(f, dict) or "kind" not in f:
            raise SchemaError(f"{where}: missing field 'kind'")
        if f["kind"] == "continuous":
            _check_keys(f, ("name", "kind", "lo", "hi"), ("mean", "std"), where)
            lo = _number(f["lo"], where, allow_none=True)
            hi = _number(f["hi"], where, allow_none=True)
            feats.append(ContinuousFeature(
                name=f["name"],
                lo=-math.inf if lo is None else lo,
                hi=math.inf if hi is None else hi,
                mean=_number(f.get("mean", 0.0), where),
                std=_number(f.get("std", 1.0), where)))
        elif f["kind"] == "categorical":
            _check_keys(f, ("name", "kind", "categories"), (), where)
            feats.append(CategoricalFeature(
                name=f["name"], categories=tuple(f["categories"])))
        else:
            raise SchemaError(f"{where}: unknown kind {f['kind']!r}")
    try:
        return FeatureSpace(tuple(feats))
    except SchemaMismatch as exc:
        raise SchemaError(f"feature_space: {exc}") from exc


def _space_doc(space: FeatureSpace) -> dict:
    feats = []
    for f in space.features:
        if isinstance(f, ContinuousFeature):
            feats.append({"name": f.name, "kind": "continuous",
                          "lo": None if math.isinf(f.lo) else f.lo,
                          "hi": None if math.isinf(f.hi) else f.hi,
                          "mean": f.mean, "std": f.std})
        else:
            feats.append({"name": f.name, "kind": "categorical",
                          "categories": list(f.categories)})
    return {"features": feats}


# ---------------------------------------------------------------------------
# Regions
# ---------------------------------------------------------------------------

def _parse_region(space: FeatureSpace, doc: dict, where: str) -> Box:
    """Region doc maps feature name -> bounds; omitted names are free."""
    comps = []
    box = full_box_raw(space)
    if not isinstance(doc, dict):
        raise SchemaError(f"{where}: expected an object")
    for name in doc:
        if name not in [f.name for f in space.features]:
            raise SchemaError(f"{where}: unknown feature {name!r}")
    for f, base in zip(space.features, box.components):
        if f.name not in doc:
            comps.append(base)
            continue
        spec = doc[f.name]
        w = f"{where}.{f.name}"
        if isinstance(f, ContinuousFeature):
            _check_keys(spec, (), ("lo", "hi"), w)
            lo = _number(spec.get("lo"), w, allow_none=True)
            hi = _number(spec.get("hi"), w, allow_none=True)
            comps.append(Interval(base.lo if lo is None else max(lo, base.lo),
                                  base.hi if hi is None else min(hi, base.hi)))
        else:
            _check_keys(spec, ("categories",), (), w)
            members = frozenset(spec["categories"])
            unknown = members - set(f.categories)
            if unknown:
                raise SchemaError(f"{w}: unknown categories {sorted(unknown)!r}")
            comps.append(CategorySet(members))
    return Box(tuple(comps))


def full_box_raw(space: FeatureSpace) -> Box:
    comps = []
    for f in space.features:
        if isinstance(f, ContinuousFeature):
            comps.append(Interval(f.lo, f.hi))
        else:
            comps.append(CategorySet(frozenset(f.categories)))
    return Box(tuple(comps))


def _region_doc(space: FeatureSpace, box: Box) -> dict:
    out = {}
    bounds = full_box_raw(space)
    for f, comp, base in zip(space.features, box.components, bounds.components):
        if comp == base:
            continue
        if isinstance(comp, Interval):
            entry = {}
            if comp.lo > base.lo:
                entry["lo"] = comp.lo
            if comp.hi < base.hi:
                entry["hi"] = comp.hi
            if entry:
                out[f.name] = entry
        else:
            out[f.name] = {"categories": sorted(comp.members)}
    return out


# ---------------------------------------------------------------------------
# Model payloads
# ---------------------------------------------------------------------------

def _parse_condition(space: FeatureSpace, doc: dict, where: str) -> Condition:
    _check_keys(doc, ("feature", "op"), ("threshold", "categories"), where)
    j = space.index_of(doc["feature"])
    op = doc["op"]
    if op in ("le", "gt"):
        if "threshold" not in doc:
            raise SchemaError(f"{where}: threshold required for op {op!r}")
        return Condition(j, op, threshold=_number(doc["threshold"], where))
    if op == "in":
        if "categories" not in doc:
            raise SchemaError(f"{where}: categories required for op 'in'")
        f = space.features[j]
        if not isinstance(f, CategoricalFeature):
            raise SchemaError(f"{where}: 'in' condition on continuous feature")
        members = frozenset(doc["categories"])
        unknown = members - set(f.categories)
        if unknown:
            raise SchemaError(f"{where}: unknown categories {sorted(unknown)!r}")
        return Condition(j, "in", categories=members)
    raise SchemaError(f"{where}: unknown op {op!r}")


def _condition_doc(space: FeatureSpace, cond: Condition) -> dict:
    name = space.features[cond.feature].name
    if cond.op in ("le", "gt"):
        return {"feature": name, "op": cond.op, "threshold": cond.threshold}
    return {"feature": name, "op": "in", "categories": sorted(cond.categories)}


def _parse_tree(space: FeatureSpace, doc: dict, where: str) -> DecisionTree:
    _check_keys(doc, ("leaves",), (), where)
    leaves = []
    for i, leaf in enumerate(doc["leaves"]):
        w = f"{where}.leaves[{i}]"
        _check_keys(leaf, ("region", "value"), (), w)
        leaves.append(Leaf(_parse_region(space, leaf["region"], w),
                           _number(leaf["value"], w)))
    if not leaves:
        raise SchemaError(f"{where}: tree has no leaves")
    return DecisionTree(tuple(leaves))


def _tree_doc(space: FeatureSpace, tree: DecisionTree) -> dict:
    return {"leaves": [{"region": _region_doc(space, l.region),
                        "value": l.value} for l in tree.leaves]}


def _parse_additive(space: FeatureSpace, doc: dict) -> AdditiveModel:
    _check_keys(doc, ("type", "intercept", "link", "terms"), (), "model")
    terms = {}
    for name, t in doc["terms"].items():
        where = f"model.terms.{name}"
        j = space.index_of(name)
        if not isinstance(t, dict) or "type" not in t:
            raise SchemaError(f"{where}: missing field 'type'")
        if t["type"] == "linear":
            _check_keys(t, ("type", "weight"), (), where)
            terms[j] = LinearTerm(_number(t["weight"], where))
        elif t["type"] == "piecewise_constant":
            _check_keys(t, ("type", "breakpoints", "values"), (), where)
            try:
                terms[j] = PiecewiseConstantTerm(
                    tuple(float(b) for b in t["breakpoints"]),
                    tuple(float(v) for v in t["values"]))
            except SchemaMismatch as exc:
                raise SchemaError(f"{where}: {exc}") from exc
        elif t["type"] == "category_table":
            _check_keys(t, ("type", "values"), (), where)
            f = space.features[j]
            if not isinstance(f, CategoricalFeature):
                raise SchemaError(f"{where}: table term on continuous feature")
            unknown = set(t["values"]) - set(f.categories)
            if unknown:
                raise SchemaError(f"{where}: unknown categories {sorted(unknown)!r}")
            terms[j] = CategoryTableTerm(
                {k: float(v) for k, v in t["values"].items()})
        else:
            raise SchemaError(f"{where}: unknown term type {t['type']!r}")
    link = doc["link"]
    if link not in ("identity", "logit", "log"):
        raise SchemaError(f"model: unknown link {link!r}")
    return AdditiveModel(intercept=_number(doc["intercept"], "model"),
                         terms=terms, link=link)


def _additive_doc(space: FeatureSpace, m: AdditiveModel) -> dict:
    terms = {}
    for j in sorted(m.terms):
        t = m.terms[j]
        name = space.features[j].name
        if isinstance(t, LinearTerm):
            terms[name] = {"type": "linear", "weight": t.weight}
        elif isinstance(t, PiecewiseConstantTerm):
            terms[name] = {"type": "piecewise_constant",
                           "breakpoints": list(t.breakpoints),
                           "values": list(t.values)}
        else:
            terms[name] = {"type": "category_table", "values": dict(t.values)}
    return {"type": "additive", "intercept": m.intercept, "link": m.link,
            "terms": terms}


def _parse_model(space: FeatureSpace, doc: dict) -> tuple[Model, str]:
    if not isinstance(doc, dict) or "type" not in doc:
        raise SchemaError("model: missing field 'type'")
    mtype = doc["type"]
    if mtype == "decision_tree":
        _check_keys(doc, ("type", "leaves"), (), "model")
        return _parse_tree(space, {"leaves": doc["leaves"]}, "model"), mtype
    if mtype == "rule_list":
        _check_keys(doc, ("type", "rules", "default_output"), (), "model")
        rules = []
        for i, r in enumerate(doc["rules"]):
            where = f"model.rules[{i}]"
            _check_keys(r, ("condition", "output"), (), where)
            rules.append(Rule(_parse_condition(space, r["condition"], where),
                              _number(r["output"], where)))
        return RuleList(tuple(rules),
                        _number(doc["default_output"], "model")), mtype
    if mtype == "additive":
        return _parse_additive(space, doc), mtype
    if mtype == "tree_ensemble":
        _check_keys(doc, ("type", "aggregation", "trees"),
                    ("post_link", "intercept"), "model")
        trees = tuple(_parse_tree(space, t, f"model.trees[{i}]")
                      for i, t in enumerate(doc["trees"]))
        return TreeEnsemble(trees, aggregation=doc["aggregation"],
                            post_link=doc.get("post_link", "identity"),
                            intercept=_number(doc.get("intercept", 0.0),
                                              "model")), mtype
    if mtype == "rule_ensemble":
        _check_keys(doc, ("type", "intercept", "rules"), (), "model")
        rules = []
        for i, r in enumerate(doc["rules"]):
            where = f"model.rules[{i}]"
            _check_keys(r, ("antecedent", "weight"), (), where)
            conds = tuple(_parse_condition(space, c, f"{where}.antecedent[{k}]")
                          for k, c in enumerate(r["antecedent"]))
            rules.append(WeightedRule(conds, _number(r["weight"], where)))
        return RuleEnsemble(_number(doc["intercept"], "model"),
                            tuple(rules)), mtype
    raise SchemaError(f"model: unknown type {mtype!r}; "
                      f"expected one of {MODEL_TYPES}")


def _model_doc(space: FeatureSpace, model: Model, mtype: str) -> dict:
    if mtype == "decision_tree":
        return {"type": mtype, **_tree_doc(space, model)}
    if mtype == "rule_list":
        return {"type": mtype,
                "rules": [{"condition": _condition_doc(space, r.condition),
                           "output": r.output} for r in model.rules],
                "default_output": model.default_output}
    if mtype == "additive":
        return _additive_doc(space, model)
    if mtype == "tree_ensemble":
        return {"type": mtype, "aggregation": model.aggregation,
                "post_link": model.post_link, "intercept": model.intercept,
                "trees": [_tree_doc(space, t) for t in model.trees]}
    if mtype == "rule_ensemble":
        return {"type": mtype, "intercept": model.intercept,
                "rules": [{"antecedent": [_condition_doc(space, c)
                                          for c in r.antecedent],
                           "weight": r.weight} for r in model.rules]}
    raise SchemaError(f"model: unknown type {mtype!r}")


# ---------------------------------------------------------------------------
# Load / save / validate
# ---------------------------------------------------------------------------

def loads_model(text: str) -> ModelFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON at line {exc.lineno}, "
                         f"column {exc.colno}: {exc.msg}") from exc
    _check_keys(doc, ("format_version", "feature_space", "model"),
                ("metadata",), "document")
    version = doc["format_version"]
    if version != FORMAT_VERSION:
        raise VersionError(f"unrecognized format_version {version!r}; "
                           f"this build reads version {FORMAT_VERSION}")
    space = _parse_space(doc["feature_space"])
    model, mtype = _parse_model(space, doc["model"])
    meta = doc.get("metadata", {})
    if not isinstance(meta, dict):
        raise SchemaError("metadata: expected an object")
    mf = ModelFile(space=space, model=model, model_type=mtype, metadata=meta)
    validate_model_file(mf)
    return mf


def load_model(path: str) -> ModelFile:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return loads_model(text)


def dumps_model(mf: ModelFile) -> str:
    doc = {
        "format_version": mf.format_version,
        "feature_space": _space_doc(mf.space),
        "model": _model_doc(mf.space, mf.model, mf.model_type),
        "metadata": mf.metadata,
    }
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


def save_model(mf: ModelFile, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_model(mf))


def validate_model_file(mf: ModelFile) -> None:
    """Cross-checks beyond field-level schema: partition invariants etc."""
    bounds = full_box_raw(mf.space)
    try:
        if isinstance(mf.model, DecisionTree):
            validate_tree_partition(mf.space, _raw_tree_view(mf.space, mf.model),
                                    bounds=bounds)
        elif isinstance(mf.model, TreeEnsemble):
            for tree in mf.model.trees:
                validate_tree_partition(mf.space, _raw_tree_view(mf.space, tree),
                                        bounds=bounds)
    except AssumptionViolated as exc:
        raise SchemaError(f"model: {exc}") from exc


def _raw_tree_view(space: FeatureSpace, tree: DecisionTree) -> DecisionTree:
    """Clip leaf regions to raw bounds so volume checks line up."""
    bounds = full_box_raw(space)
    leaves = []
    for leaf in tree.leaves:
        comps = [c.intersect(b) for c, b in zip(leaf.region.components,
                                                bounds.components)]
        leaves.append(Leaf(Box(tuple(comps)), leaf.value))
    return DecisionTree(tuple(leaves))


# ---------------------------------------------------------------------------
# Raw -> normalized frame
# ---------------------------------------------------------------------------

def normalize_box(space: FeatureSpace, box: Box) -> Box:
    comps = []
    for f, comp in zip(space.features, box.components):
        if isinstance(f, ContinuousFeature):
            comps.append(Interval(f.normalize(comp.lo), f.normalize(comp.hi)))
        else:
            comps.append(comp)
    return Box(tuple(comps))


def denormalize_box(space: FeatureSpace, box: Box) -> Box:
    comps = []
    for f, comp in zip(space.features, box.components):
        if isinstance(f, ContinuousFeature):
            comps.append(Interval(f.denormalize(comp.lo), f.denormalize(comp.hi)))
        else:
            comps.append(comp)
    return Box(tuple(comps))


def normalize_model(space: FeatureSpace, model: Model) -> Model:
    """Standardized-frame twin of a raw-frame model."""
    if isinstance(model, DecisionTree):
        bounds = full_box_raw(space)
        leaves = []
        for leaf in model.leaves:
            clipped = Box(tuple(c.intersect(b) for c, b in
                                zip(leaf.region.components, bounds.components)))
            leaves.append(Leaf(normalize_box(space, clipped), leaf.value))
        return DecisionTree(tuple(leaves))
    if isinstance(model, RuleList):
        return RuleList(tuple(Rule(_normalize_condition(space, r.condition),
                                   r.output) for r in model.rules),
                        model.default_output)
    if isinstance(model, AdditiveModel):
        intercept = model.intercept
        terms = {}
        for j, t in model.terms.items():
            f = space.features[j]
            if isinstance(t, LinearTerm):
                terms[j] = LinearTerm(t.weight * f.std)
                intercept += t.weight * f.mean
            elif isinstance(t, PiecewiseConstantTerm):
                terms[j] = PiecewiseConstantTerm(
                    tuple(f.normalize(b) for b in t.breakpoints), t.values)
            else:
                terms[j] = t
        return AdditiveModel(intercept=intercept, terms=terms, link=model.link)
    if isinstance(model, TreeEnsemble):
        return TreeEnsemble(tuple(normalize_model(space, t)
                                  for t in model.trees),
                            aggregation=model.aggregation,
                            post_link=model.post_link,
                            intercept=model.intercept)
    if isinstance(model, RuleEnsemble):
        return RuleEnsemble(model.intercept, tuple(
            WeightedRule(tuple(_normalize_condition(space, c)
                               for c in r.antecedent), r.weight)
            for r in model.rules))
    raise SchemaError(f"cannot normalize model type {type(model).__name__}")


def _normalize_condition(space: FeatureSpace, cond: Condition) -> Condition:
    if cond.op == "in":
        return cond
    f = space.features[cond.feature]
    return Condition(cond.feature, cond.op, threshold=f.normalize(cond.threshold))


def normalized_space(space: FeatureSpace) -> FeatureSpace:
    """The same schema with standardized bounds and identity stats."""
    feats = []
    for f in space.features:
        if isinstance(f, ContinuousFeature):
            feats.append(ContinuousFeature(f.name, f.normalize(f.lo),
                                           f.normalize(f.hi), 0.0, 1.0))
        else:
            feats.append(f)
    return FeatureSpace(tuple(feats))
