"""Shared generators and brute-force oracles for the test suite."""

from __future__ import annotations

import itertools
import math
import random

import numpy as np
import pytest

from devcert import (
    AdditiveModel,
    BallUnion,
    Box,
    CategoricalFeature,
    CategorySet,
    CategoryTableTerm,
    CertificationSet,
    ContinuousFeature,
    DecisionTree,
    DeviationFn,
    FeatureSpace,
    FiniteSet,
    FullSpace,
    Interval,
    Leaf,
    LinearTerm,
    PiecewiseConstantTerm,
    TreeEnsemble,
    full_box,
)
from devcert.models import link_inverse


# ---------------------------------------------------------------------------
# Spaces and points
# ---------------------------------------------------------------------------

def make_space(n_cont: int, cat_sizes: tuple[int, ...] = (),
               lo: float = -3.0, hi: float = 3.0) -> FeatureSpace:
    feats = [ContinuousFeature(f"x{i}", lo, hi) for i in range(n_cont)]
    for k, size in enumerate(cat_sizes):
        cats = tuple(f"c{k}v{j}" for j in range(size))
        feats.append(CategoricalFeature(f"cat{k}", cats))
    return FeatureSpace(tuple(feats))


def random_point(space: FeatureSpace, rng: random.Random):
    out = []
    for f in space.features:
        if isinstance(f, ContinuousFeature):
            out.append(rng.uniform(f.lo, f.hi))
        else:
            out.append(rng.choice(f.categories))
    return tuple(out)


def random_points(space: FeatureSpace, n: int, rng: random.Random):
    return tuple(random_point(space, rng) for _ in range(n))


# ---------------------------------------------------------------------------
# Random models
# ---------------------------------------------------------------------------

def random_tree(space: FeatureSpace, n_leaves: int,
                rng: random.Random) -> DecisionTree:
    """Partition the space by repeated random splits; random leaf values."""
    boxes = [full_box(space)]
    while len(boxes) < n_leaves:
        order = list(range(len(boxes)))
        rng.shuffle(order)
        for bi in order:
            box = boxes[bi]
            dims = []
            for j, comp in enumerate(box.components):
                if isinstance(comp, Interval):
                    if comp.hi - comp.lo > 1e-3:
                        dims.append(j)
                elif len(comp.members) >= 2:
                    dims.append(j)
            if not dims:
                continue
            j = rng.choice(dims)
            comp = box.components[j]
            if isinstance(comp, Interval):
                w = comp.hi - comp.lo
                t = rng.uniform(comp.lo + 0.1 * w, comp.hi - 0.1 * w)
                left = Interval(comp.lo, t)
                right = Interval(t, comp.hi)
            else:
                members = sorted(comp.members)
                k = rng.randrange(1, len(members))
                rng.shuffle(members)
                left = CategorySet(frozenset(members[:k]))
                right = CategorySet(frozenset(members[k:]))
            la = list(box.components)
            lb = list(box.components)
            la[j], lb[j] = left, right
            boxes[bi] = Box(tuple(la))
            boxes.append(Box(tuple(lb)))
            break
        else:
            break  # nothing splittable left
    leaves = tuple(Leaf(b, rng.uniform(0.0, 1.0)) for b in boxes)
    return DecisionTree(leaves)


def random_ensemble(space: FeatureSpace, k: int, leaves_per_tree: int,
                    rng: random.Random,
                    aggregation: str = "mean") -> TreeEnsemble:
    trees = tuple(random_tree(space, leaves_per_tree, rng) for _ in range(k))
    return TreeEnsemble(trees, aggregation=aggregation)


def random_gam(space: FeatureSpace, rng: random.Random, max_bins: int = 8,
               link: str = "identity", allow_linear: bool = True
               ) -> AdditiveModel:
    terms = {}
    for j, f in enumerate(space.features):
        if isinstance(f, CategoricalFeature):
            terms[j] = CategoryTableTerm(
                {c: rng.uniform(-1, 1) for c in f.categories})
        elif allow_linear and rng.random() < 0.3:
            terms[j] = LinearTerm(rng.uniform(-1, 1))
        else:
            n_bins = rng.randint(2, max_bins)
            bps = sorted(rng.uniform(f.lo, f.hi) for _ in range(n_bins - 1))
            terms[j] = PiecewiseConstantTerm(
                tuple(bps), tuple(rng.uniform(-1, 1) for _ in range(n_bins)))
    return AdditiveModel(intercept=rng.uniform(-0.5, 0.5), terms=terms,
                         link=link)


def random_monotone_deviation(rng: random.Random) -> DeviationFn:
    """Asymmetric monotone deviation: zero on the diagonal, rising outward."""
    a = rng.uniform(0.2, 2.0)
    b = rng.uniform(0.2, 2.0)
    p = rng.uniform(0.5, 2.5)
    q = rng.uniform(0.5, 2.5)

    def fn(y, y0):
        up = np.maximum(np.asarray(y) - y0, 0.0)
        dn = np.maximum(np.asarray(y0) - y, 0.0)
        return a * up ** p + b * dn ** q

    return DeviationFn.custom(fn, satisfies_monotone=True,
                              satisfies_difference=True, symmetric=False)


# ---------------------------------------------------------------------------
# Certification sets
# ---------------------------------------------------------------------------

def random_certset(space: FeatureSpace, rng: random.Random,
                   kind: str, n_centers: int = 5,
                   radius: float | None = None) -> CertificationSet:
    if kind == "full":
        return FullSpace()
    centers = random_points(space, n_centers, rng)
    if kind == "finite":
        return FiniteSet(centers)
    r = radius if radius is not None else rng.choice([0.1, 0.3, 0.8, 1.5])
    return BallUnion(centers, r)


# ---------------------------------------------------------------------------
# Grid oracle for piecewise-constant pairs
# ---------------------------------------------------------------------------

def _axis_points(space, trees, certset, j):
    """Midpoints of the threshold-refined grid on continuous axis j."""
    f = space.features[j]
    cuts = {f.lo, f.hi}
    for tree in trees:
        for leaf in tree.leaves:
            comp = leaf.region.components[j]
            cuts.add(comp.lo)
            cuts.add(comp.hi)
    if isinstance(certset, BallUnion):
        for c in certset.centers:
            cuts.add(c[j] - certset.radius)
            cuts.add(c[j] + certset.radius)
    cuts = sorted(v for v in cuts if f.lo <= v <= f.hi)
    return [0.5 * (a + b) for a, b in zip(cuts, cuts[1:]) if b > a]


def grid_points(space: FeatureSpace, trees, certset):
    """All interior cell representatives of the joint threshold grid."""
    axes = []
    for j, f in enumerate(space.features):
        if isinstance(f, ContinuousFeature):
            axes.append(_axis_points(space, trees, certset, j))
        else:
            axes.append(list(f.categories))
    return itertools.product(*axes)


def point_in_certset(space, point, certset) -> bool:
    if isinstance(certset, FullSpace):
        return True
    if isinstance(certset, FiniteSet):
        return point in certset.points
    for c in certset.centers:
        ok = True
        for v, cv in zip(point, c):
            if isinstance(v, str):
                if certset.radius < 1.0 and v != cv:
                    ok = False
                    break
            elif abs(v - cv) > certset.radius:
                ok = False
                break
        if ok:
            return True
    return False


def eval_tree_at(tree: DecisionTree, point) -> float:
    for leaf in tree.leaves:
        if leaf.region.contains(point):
            return leaf.value
    raise AssertionError(f"uncovered point {point!r}")


def tree_pair_grid_oracle(space, f, f0, D, certset) -> float:
    """Dense-grid maximum of D(f, f0): the tree-pair exactness oracle."""
    best = -math.inf
    pts = list(grid_points(space, list(getattr(f, "trees", [f])) + [f0],
                           certset))
    if isinstance(certset, FiniteSet):
        pts = list(certset.points)
    for p in pts:
        if not point_in_certset(space, p, certset):
            continue
        if hasattr(f, "trees"):
            y = f.aggregate([eval_tree_at(t, p) for t in f.trees])
        else:
            y = eval_tree_at(f, p)
        best = max(best, float(D.value(y, eval_tree_at(f0, p))))
    return best


# ---------------------------------------------------------------------------
# Bin-product oracle for additive models
# ---------------------------------------------------------------------------

def _term_representatives(space, model, j, comp):
    """Points on feature j that cover every plateau/endpoint in `comp`."""
    f = space.features[j]
    if isinstance(f, CategoricalFeature):
        return sorted(comp.members)
    lo, hi = comp.lo, comp.hi
    term = model.terms.get(j)
    pts = {lo, hi, 0.5 * (lo + hi)}
    if isinstance(term, PiecewiseConstantTerm):
        edges = [lo] + [b for b in term.breakpoints if lo < b < hi] + [hi]
        for a, b in zip(edges, edges[1:]):
            pts.add(0.5 * (a + b))
        pts.update(e for e in edges if lo <= e <= hi)
    return sorted(pts)


def additive_region_max(space, model, D, y0, region,
                        link: str | None = None) -> float:
    """Brute-force max of D(g^{-1}(score), y0) over one box region."""
    axes = [_term_representatives(space, model, j, comp)
            for j, comp in enumerate(region.components)]
    best = -math.inf
    use_link = link if link is not None else model.link
    for combo in itertools.product(*axes):
        z = model.intercept
        for j, v in enumerate(combo):
            t = model.terms.get(j)
            if t is None:
                continue
            if isinstance(t, LinearTerm):
                z += t.weight * v
            elif isinstance(t, PiecewiseConstantTerm):
                z += t.value_at(v)
            else:
                z += t.value_at(v)
        best = max(best, float(D.value(link_inverse(use_link, z), y0)))
    return best
