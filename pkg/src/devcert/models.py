"""Model representations, evaluation, and conversions.

Trees are stored as flattened leaf lists (region box + constant value); an
optional split structure is kept alongside for descent-based evaluation.
All certifiers consume the leaf list, so only axis-aligned (non-oblique)
trees are representable. Split conventions: "x <= t" yields a left interval
[lo, t] and a right interval [t, hi]; both are closed, and a boundary point
may belong to both leaves, which is harmless for maximization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .errors import AssumptionViolated, SchemaMismatch, UnsupportedCondition
from .geometry import box_meets_certset
from .types import (
    Box,
    CategoricalFeature,
    CategorySet,
    CertificationSet,
    FeatureSpace,
    Interval,
    Point,
    Prediction,
    Score,
    full_box,
)


# ---------------------------------------------------------------------------
# Decision trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Leaf:
    region: Box
    value: float


@dataclass(frozen=True)
class SplitNode:
    """Binary split: continuous (threshold) or categorical (left set)."""

    feature: int
    threshold: float | None = None
    left_categories: frozenset[str] | None = None
    left: "SplitNode | float" = 0.0
    right: "SplitNode | float" = 0.0

    def goes_left(self, v) -> bool:
        if self.threshold is not None:
            return v <= self.threshold
        return v in self.left_categories


@dataclass(frozen=True)
class DecisionTree:
    leaves: tuple[Leaf, ...]
    split_root: SplitNode | float | None = None

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)


def tree_from_splits(space: FeatureSpace, root: SplitNode | float) -> DecisionTree:
    """Flatten a split structure into leaf boxes covering the space."""
    leaves: list[Leaf] = []

    def descend(node, box: Box):
        if not isinstance(node, SplitNode):
            leaves.append(Leaf(box, float(node)))
            return
        comp = box.components[node.feature]
        if node.threshold is not None:
            if not isinstance(comp, Interval):
                raise SchemaMismatch("threshold split on a categorical feature")
            lbox = _replace_component(box, node.feature,
                                      Interval(comp.lo, min(comp.hi, node.threshold)))
            rbox = _replace_component(box, node.feature,
                                      Interval(max(comp.lo, node.threshold), comp.hi))
        else:
            if not isinstance(comp, CategorySet):
                raise SchemaMismatch("category split on a continuous feature")
            lbox = _replace_component(box, node.feature,
                                      comp.intersect(CategorySet(node.left_categories)))
            rbox = _replace_component(
                box, node.feature,
                CategorySet(comp.members - node.left_categories))
        if not lbox.is_empty():
            descend(node.left, lbox)
        if not rbox.is_empty():
            descend(node.right, rbox)

    descend(root, full_box(space))
    return DecisionTree(tuple(leaves), split_root=root)


def _replace_component(box: Box, idx: int, comp) -> Box:
    comps = list(box.components)
    comps[idx] = comp
    return Box(tuple(comps))


def constant_tree(space: FeatureSpace, value: float) -> DecisionTree:
    return DecisionTree((Leaf(full_box(space), value),), split_root=float(value))


# ---------------------------------------------------------------------------
# Rule lists and rule ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Condition:
    """Single-feature predicate: x <= t, x > t, or x in a category set."""

    feature: int
    op: str  # "le" | "gt" | "in"
    threshold: float | None = None
    categories: frozenset[str] | None = None

    def holds(self, point: Point) -> bool:
        v = point[self.feature]
        if self.op == "le":
            return v <= self.threshold
        if self.op == "gt":
            return v > self.threshold
        if self.op == "in":
            return v in self.categories
        raise UnsupportedCondition(f"unknown op {self.op!r}")


@dataclass(frozen=True)
class Rule:
    condition: Condition
    output: float


@dataclass(frozen=True)
class RuleList:
    rules: tuple[Rule, ...]
    default_output: float


@dataclass(frozen=True)
class WeightedRule:
    antecedent: tuple[Condition, ...]
    weight: float


@dataclass(frozen=True)
class RuleEnsemble:
    intercept: float
    rules: tuple[WeightedRule, ...]


# ---------------------------------------------------------------------------
# Additive models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearTerm:
    weight: float


@dataclass(frozen=True)
class PiecewiseConstantTerm:
    """Step function, right-continuous: value i holds on [b_{i-1}, b_i).

    breakpoints are strictly ascending; len(values) == len(breakpoints) + 1.
    """

    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.breakpoints) + 1:
            raise SchemaMismatch("piecewise term needs len(values) == len(breakpoints)+1")
        if any(b >= c for b, c in zip(self.breakpoints, self.breakpoints[1:])):
            raise SchemaMismatch("breakpoints must be strictly ascending")
        if not all(math.isfinite(v) for v in self.values):
            raise SchemaMismatch("piecewise values must be finite")

    def value_at(self, x: float) -> float:
        return self.values[int(np.searchsorted(self.breakpoints, x, side="right"))]


@dataclass(frozen=True)
class CategoryTableTerm:
    """Per-category values; categories absent from the table contribute 0."""

    values: Mapping[str, float]

    def value_at(self, c: str) -> float:
        return self.values.get(c, 0.0)


ShapeTerm = Union[LinearTerm, PiecewiseConstantTerm, CategoryTableTerm]

LINKS = ("identity", "logit", "log")


def link_inverse(link: str, z: float) -> float:
    if link == "identity":
        return z
    if link == "logit":
        return 1.0 / (1.0 + math.exp(-z))
    if link == "log":
        return math.exp(z)
    raise SchemaMismatch(f"unknown link {link!r}")


def link_forward(link: str, y: float) -> float:
    if link == "identity":
        return y
    if link == "logit":
        eps = 1e-12
        y = min(max(y, eps), 1.0 - eps)
        return math.log(y / (1.0 - y))
    if link == "log":
        return math.log(y)
    raise SchemaMismatch(f"unknown link {link!r}")


@dataclass(frozen=True)
class AdditiveModel:
    """g^{-1}(intercept + sum_j f_j(x_j)) with per-feature shape terms.

    Terms map feature index -> shape term; features without a term contribute
    zero. All three links are strictly increasing.
    """

    intercept: float
    terms: Mapping[int, ShapeTerm]
    link: str = "identity"

    def __post_init__(self):
        if self.link not in LINKS:
            raise SchemaMismatch(f"unknown link {self.link!r}")

    def score(self, point: Point) -> float:
        """Link-scale score (before g^{-1})."""
        z = self.intercept
        for j, term in self.terms.items():
            v = point[j]
            if isinstance(term, LinearTerm):
                z += term.weight * v
            elif isinstance(term, PiecewiseConstantTerm):
                z += term.value_at(v)
            else:
                z += term.value_at(v)
        return z


# ---------------------------------------------------------------------------
# Tree ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TreeEnsemble:
    """K trees aggregated by mean or sum, optionally through a logistic."""

    trees: tuple[DecisionTree, ...]
    aggregation: str = "mean"  # "mean" | "sum"
    post_link: str = "identity"  # "identity" | "logistic"
    intercept: float = 0.0

    def __post_init__(self):
        if not self.trees:
            raise SchemaMismatch("ensemble needs at least one tree")
        if self.aggregation not in ("mean", "sum"):
            raise SchemaMismatch(f"unknown aggregation {self.aggregation!r}")
        if self.post_link not in ("identity", "logistic"):
            raise SchemaMismatch(f"unknown post link {self.post_link!r}")

    def aggregate(self, leaf_values: Sequence[float]) -> float:
        z = self.intercept
        if self.aggregation == "mean":
            z += sum(leaf_values) / len(self.trees)
        else:
            z += sum(leaf_values)
        if self.post_link == "logistic":
            return 1.0 / (1.0 + math.exp(-z))
        return z


Model = Union[DecisionTree, RuleList, AdditiveModel, TreeEnsemble, RuleEnsemble]


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def predict(model: Model, point: Point) -> Prediction:
    """Deterministic score at a normalized point."""
    if isinstance(model, DecisionTree):
        return Score(_tree_value(model, point))
    if isinstance(model, RuleList):
        for rule in model.rules:
            if rule.condition.holds(point):
                return Score(rule.output)
        return Score(model.default_output)
    if isinstance(model, AdditiveModel):
        return Score(link_inverse(model.link, model.score(point)))
    if isinstance(model, TreeEnsemble):
        return Score(model.aggregate([_tree_value(t, point) for t in model.trees]))
    if isinstance(model, RuleEnsemble):
        z = model.intercept
        for rule in model.rules:
            if all(c.holds(point) for c in rule.antecedent):
                z += rule.weight
        return Score(z)
    raise SchemaMismatch(f"unknown model type {type(model).__name__}")


def _tree_value(tree: DecisionTree, point: Point) -> float:
    if tree.split_root is not None:
        node = tree.split_root
        while isinstance(node, SplitNode):
            node = node.left if node.goes_left(point[node.feature]) else node.right
        return float(node)
    for leaf in tree.leaves:
        if leaf.region.contains(point):
            return leaf.value
    raise SchemaMismatch("point not covered by any leaf")


def predict_by_leaf_lookup(tree: DecisionTree, point: Point) -> float:
    """First-match lookup over the flattened leaf list (ignores split_root)."""
    for leaf in tree.leaves:
        if leaf.region.contains(point):
            return leaf.value
    raise SchemaMismatch("point not covered by any leaf")


# ---------------------------------------------------------------------------
# Conversions
# ---------------------------------------------------------------------------

def negate_condition(space: FeatureSpace, cond: Condition) -> Condition:
    f = space.features[cond.feature]
    if cond.op == "le":
        return Condition(cond.feature, "gt", threshold=cond.threshold)
    if cond.op == "gt":
        return Condition(cond.feature, "le", threshold=cond.threshold)
    if cond.op == "in":
        if not isinstance(f, CategoricalFeature):
            raise UnsupportedCondition("category condition on continuous feature")
        return Condition(cond.feature, "in",
                         categories=frozenset(f.categories) - cond.categories)
    raise UnsupportedCondition(f"unknown op {cond.op!r}")


def _condition_box(space: FeatureSpace, box: Box, cond: Condition) -> Box:
    """Restrict a box by one condition (closed-interval convention)."""
    comp = box.components[cond.feature]
    if cond.op in ("le", "gt"):
        if not isinstance(comp, Interval):
            raise UnsupportedCondition("threshold condition on categorical feature")
        if cond.op == "le":
            new = Interval(comp.lo, min(comp.hi, cond.threshold))
        else:
            new = Interval(max(comp.lo, cond.threshold), comp.hi)
    else:
        if not isinstance(comp, CategorySet):
            raise UnsupportedCondition("category condition on continuous feature")
        new = comp.intersect(CategorySet(cond.categories))
    return _replace_component(box, cond.feature, new)


def rulelist_to_tree(space: FeatureSpace, rl: RuleList,
                     bounds: Box | None = None) -> DecisionTree:
    """Equivalent one-sided tree; leaf count = number of rules + default.

    `bounds` overrides the enclosing box (normalized bounds by default), so
    conversions can run in either coordinate frame.
    """
    leaves: list[Leaf] = []
    residual = full_box(space) if bounds is None else bounds
    for rule in rl.rules:
        region = _condition_box(space, residual, rule.condition)
        if not region.is_empty():
            leaves.append(Leaf(region, rule.output))
        residual = _condition_box(space, residual,
                                  negate_condition(space, rule.condition))
        if residual.is_empty():
            break
    else:
        leaves.append(Leaf(residual, rl.default_output))
    return DecisionTree(tuple(leaves))


def ruleensemble_to_ensemble(space: FeatureSpace, re: RuleEnsemble,
                             bounds: Box | None = None) -> TreeEnsemble:
    """One one-sided tree per rule; sum aggregation reproduces the ensemble.

    Each conjunction condition is negated in turn to a zero-valued leaf, and
    the final leaf (all conditions true) carries the rule weight, so the tree
    has conjunction degree + 1 leaves.
    """
    trees = []
    for rule in re.rules:
        rules = tuple(
            Rule(negate_condition(space, cond), 0.0) for cond in rule.antecedent)
        trees.append(rulelist_to_tree(space, RuleList(rules, rule.weight),
                                      bounds=bounds))
    if not trees:
        box = full_box(space) if bounds is None else bounds
        trees.append(DecisionTree((Leaf(box, 0.0),)))
    return TreeEnsemble(tuple(trees), aggregation="sum", post_link="identity",
                        intercept=re.intercept)


def tree_leaves_meeting(tree: DecisionTree, certset: CertificationSet) -> list[int]:
    """Indices of leaves whose region meets the certification set."""
    out = []
    for i, leaf in enumerate(tree.leaves):
        if box_meets_certset(leaf.region, certset).nonempty:
            out.append(i)
    return out


# ---------------------------------------------------------------------------
# Structural validation
# ---------------------------------------------------------------------------

def _interior_overlap(a: Box, b: Box) -> bool:
    """True if the intersection has nonzero extent on every continuous axis."""
    for ca, cb in zip(a.components, b.components):
        if isinstance(ca, Interval):
            if min(ca.hi, cb.hi) <= max(ca.lo, cb.lo):
                return False
        else:
            if not (ca.members & cb.members):
                return False
    return True


def _box_volume(space: FeatureSpace, box: Box) -> float:
    v = 1.0
    for f, c in zip(space.features, box.components):
        if isinstance(c, Interval):
            v *= max(c.hi - c.lo, 0.0)
        else:
            v *= len(c.members)
    return v


def validate_tree_partition(space: FeatureSpace, tree: DecisionTree,
                            bounds: Box | None = None,
                            rtol: float = 1e-9) -> None:
    """Check leaves are interior-disjoint and cover the bounds by volume.

    `bounds` must be in the same coordinate frame as the leaf regions
    (normalized by default). Unbounded or degenerate spaces skip the volume
    test but still get the overlap check.
    """
    leaves = tree.leaves
    for i in range(len(leaves)):
        for j in range(i + 1, len(leaves)):
            if _interior_overlap(leaves[i].region, leaves[j].region):
                raise AssumptionViolated(
                    f"leaves {i} and {j} overlap on an interior region; leaf "
                    "regions must partition the feature space")
    total = _box_volume(space, full_box(space) if bounds is None else bounds)
    if math.isfinite(total) and total > 0:
        covered = sum(_box_volume(space, l.region) for l in leaves)
        if not math.isclose(covered, total, rel_tol=rtol):
            raise AssumptionViolated(
                f"leaf volumes sum to {covered!r}, space volume is {total!r}; "
                "leaves must cover the feature space")
