"""Exact maximum deviation for generalized additive models.

Because an additive score separates across features, extremizing it over a
Cartesian region is d independent one-dimensional problems: pick the best
plateau of each step term, the best endpoint of each linear term, the best
category of each table. For a monotone deviation function the maximum of
D(f(x), y0) over a region is then reached at one of the two score extremes,
so every certification reduces to a handful of extremizations:

* constant reference: one region, both senses;
* tree reference: one region per (reference leaf x witness ball), both senses;
* additive reference (identity links): extremize the termwise difference.

Values returned by extremization are on the link scale and include the
intercept.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AssumptionViolated,
    EmptyCertSet,
    EmptyRegion,
    SchemaMismatch,
)
from .geometry import (
    clip_box_to_ball,
    linear_max_over_lp_ball,
    overapprox_linf,
)
from .models import (
    AdditiveModel,
    CategoryTableTerm,
    DecisionTree,
    LinearTerm,
    PiecewiseConstantTerm,
    link_inverse,
)
from .results import CertResult, FeatureContribution, LeafBreakdown, Maximizer
from .types import (
    BallUnion,
    Box,
    CategoricalFeature,
    CategorySet,
    CertificationSet,
    ContinuousFeature,
    DeviationFn,
    FeatureSpace,
    FiniteSet,
    FullSpace,
    Interval,
    NINF,
    PINF,
    full_box,
)

TIE_TOL = 1e-12


# ---------------------------------------------------------------------------
# One-dimensional extremization
# ---------------------------------------------------------------------------

@dataclass
class _Extreme:
    value: float
    extremizer: object  # Interval or CategorySet
    segment_evals: int


def _extremize_linear(w: float, iv: Interval, sense: int) -> _Extreme:
    at_hi = w * iv.hi
    at_lo = w * iv.lo
    if sense * at_hi > sense * at_lo:
        return _Extreme(at_hi, Interval(iv.hi, iv.hi), 2)
    if sense * at_lo > sense * at_hi:
        return _Extreme(at_lo, Interval(iv.lo, iv.lo), 2)
    return _Extreme(at_lo, iv, 2)


def _extremize_step(term: PiecewiseConstantTerm, iv: Interval,
                    sense: int) -> _Extreme:
    bps = term.breakpoints
    # pieces are [B_i, B_{i+1}) with B_0 = -inf, B_{k+1} = +inf
    first = int(np.searchsorted(bps, iv.lo, side="right"))
    last = int(np.searchsorted(bps, iv.hi, side="right"))
    best = None
    best_seg = None
    n = 0
    for i in range(first, last + 1):
        lo_i = bps[i - 1] if i > 0 else NINF
        hi_i = bps[i] if i < len(bps) else PINF
        n += 1
        v = term.values[i]
        if best is None or sense * v > sense * best + TIE_TOL:
            best = v
            best_seg = Interval(max(iv.lo, lo_i), min(iv.hi, hi_i))
        elif abs(v - best) <= TIE_TOL and best_seg is not None:
            # adjacent equal plateaus merge into one reported interval
            if max(iv.lo, lo_i) <= best_seg.hi:
                best_seg = Interval(best_seg.lo, min(iv.hi, hi_i))
    return _Extreme(best, best_seg, n)


def _extremize_table(term: CategoryTableTerm, cs: CategorySet,
                     sense: int) -> _Extreme:
    best = None
    members = []
    for c in sorted(cs.members):
        v = term.value_at(c)
        if best is None or sense * v > sense * best + TIE_TOL:
            best, members = v, [c]
        elif abs(v - best) <= TIE_TOL:
            members.append(c)
    return _Extreme(best, CategorySet(frozenset(members)), len(cs.members))


def _extremize_component(term, comp, sense: int) -> _Extreme:
    if term is None:
        return _Extreme(0.0, comp, 0)
    if isinstance(term, LinearTerm):
        return _extremize_linear(term.weight, comp, sense)
    if isinstance(term, PiecewiseConstantTerm):
        return _extremize_step(term, comp, sense)
    if isinstance(term, CategoryTableTerm):
        return _extremize_table(term, comp, sense)
    raise SchemaMismatch(f"unknown shape term {type(term).__name__}")


@dataclass
class ExtremizeOutcome:
    value: float  # link scale, intercept included
    argmax: Box
    contributions: list[FeatureContribution] = field(default_factory=list)
    segment_evals: int = 0


def extremize_additive(space: FeatureSpace, model: AdditiveModel, region: Box,
                       sense: str = "max") -> ExtremizeOutcome:
    """Extremum of the additive score over a box, feature by feature."""
    if region.is_empty():
        raise EmptyRegion("cannot extremize over an empty region")
    sgn = 1 if sense == "max" else -1
    total = model.intercept
    comps = []
    contribs = []
    evals = 0
    for j, comp in enumerate(region.components):
        ext = _extremize_component(model.terms.get(j), comp, sgn)
        total += ext.value
        comps.append(ext.extremizer)
        contribs.append(FeatureContribution(j, ext.value, ext.extremizer))
        evals += ext.segment_evals
    return ExtremizeOutcome(total, Box(tuple(comps)), contribs, evals)


def feature_contributions(space: FeatureSpace, model: AdditiveModel,
                          region: Box, sense: str = "max"
                          ) -> list[FeatureContribution]:
    """Per-feature extremum of f_j over the region, ranked by magnitude."""
    out = extremize_additive(space, model, region, sense)
    return sorted(out.contributions,
                  key=lambda c: (-abs(c.contribution), c.feature))


# ---------------------------------------------------------------------------
# Certifiers
# ---------------------------------------------------------------------------

def _require_monotone(D: DeviationFn) -> None:
    if not D.satisfies_monotone:
        raise AssumptionViolated(
            "this certifier needs a deviation that is zero on the diagonal "
            "and monotone away from it")


def certify_additive_vs_constant(space: FeatureSpace, f: AdditiveModel,
                                 y0: float, D: DeviationFn,
                                 region: Box) -> CertResult:
    """Max of D(f(x), y0) over one box: both score extremes through D."""
    _require_monotone(D)
    t0 = time.perf_counter()
    hi = extremize_additive(space, f, region, "max")
    lo = extremize_additive(space, f, region, "min")
    cand = [(D.value(link_inverse(f.link, out.value), y0), out, sense)
            for out, sense in ((hi, "max"), (lo, "min"))]
    best = max(c[0] for c in cand)
    maximizers = [
        Maximizer(box=out.argmax, value=val, detail={"sense": sense})
        for val, out, sense in cand if val >= best - TIE_TOL]
    win = next(out for val, out, _ in cand if val >= best - TIE_TOL)
    contribs = sorted(win.contributions,
                      key=lambda c: (-abs(c.contribution), c.feature))
    stats = {"extremizations": 2,
             "segment_evals": hi.segment_evals + lo.segment_evals,
             "wall_time_s": time.perf_counter() - t0}
    return CertResult(lower=best, upper=best, exact=True,
                      maximizers=maximizers, contributions=contribs,
                      stats=stats)


def _regions_for_certset(space: FeatureSpace, base: Box,
                         certset: CertificationSet):
    """Decompose base ∩ certset into boxes with their witness ball ids.

    Returns (list of (box, ids), dedup_hits). Identical clipped boxes are
    merged because distinct balls often clip to the same box at large radius.
    """
    if isinstance(certset, FullSpace):
        return [(base, frozenset())], 0
    if isinstance(certset, FiniteSet):
        pts = certset.points
        r = 0.0
        centers = pts
    else:
        centers = certset.centers
        r = certset.radius
    seen: dict = {}
    order: list = []
    hits = 0
    for i, c in enumerate(centers):
        clipped = clip_box_to_ball(base, c, r)
        if clipped is None:
            continue
        key = _box_key(clipped)
        if key in seen:
            box, ids = seen[key]
            seen[key] = (box, ids | {i})
            hits += 1
        else:
            seen[key] = (clipped, frozenset((i,)))
            order.append(key)
    return [seen[k] for k in order], hits


def _box_key(box: Box) -> tuple:
    parts = []
    for c in box.components:
        if isinstance(c, Interval):
            parts.append((c.lo, c.hi))
        else:
            parts.append(tuple(sorted(c.members)))
    return tuple(parts)


def certify_additive_vs_tree(space: FeatureSpace, f: AdditiveModel,
                             f0: DecisionTree, D: DeviationFn,
                             certset: CertificationSet) -> CertResult:
    """Max deviation against a piecewise-constant reference.

    Solves two extremizations per (reference leaf x witness ball) region and
    takes the overall maximum; also returns the per-reference-leaf breakdown
    with link-scale score ranges.
    """
    _require_monotone(D)
    t0 = time.perf_counter()

    exact = True
    lower_floor = None
    if isinstance(certset, BallUnion) and certset.norm != PINF:
        exact = False
        floor = certify_additive_vs_tree(
            space, f, f0, D, FiniteSet(certset.centers))
        lower_floor = floor.lower
        certset = overapprox_linf(certset)

    best = -math.inf
    maximizers: list[Maximizer] = []
    breakdown: list[LeafBreakdown] = []
    win_contribs: list[FeatureContribution] = []
    n_ext = 0
    n_segs = 0
    dedup = 0

    for m, leaf in enumerate(f0.leaves):
        if leaf.region.is_empty():
            continue
        regions, hits = _regions_for_certset(space, leaf.region, certset)
        dedup += hits
        if not regions:
            continue
        leaf_best = -math.inf
        leaf_box = None
        leaf_lo, leaf_hi = math.inf, -math.inf
        for box, ids in regions:
            hi = extremize_additive(space, f, box, "max")
            lo = extremize_additive(space, f, box, "min")
            n_ext += 2
            n_segs += hi.segment_evals + lo.segment_evals
            leaf_lo = min(leaf_lo, lo.value)
            leaf_hi = max(leaf_hi, hi.value)
            for out, sense in ((hi, "max"), (lo, "min")):
                val = D.value(link_inverse(f.link, out.value), leaf.value)
                if val > leaf_best:
                    leaf_best, leaf_box = val, out.argmax
                if val > best + TIE_TOL:
                    best = val
                    maximizers = [Maximizer(out.argmax, val, ids,
                                            {"reference_leaf": m, "sense": sense})]
                    win_contribs = out.contributions
                elif val >= best - TIE_TOL:
                    maximizers.append(Maximizer(out.argmax, val, ids,
                                                {"reference_leaf": m,
                                                 "sense": sense}))
        breakdown.append(LeafBreakdown(
            leaf_index=m, reference_value=leaf.value, deviation=leaf_best,
            maximizer=leaf_box, model_min=leaf_lo, model_max=leaf_hi,
            leaf_box=leaf.region))

    if not breakdown:
        raise EmptyCertSet("no reference leaf meets the certification set")

    upper = best
    lower = best if exact else float(lower_floor)
    contribs = sorted(win_contribs,
                      key=lambda c: (-abs(c.contribution), c.feature))
    stats = {"extremizations": n_ext, "segment_evals": n_segs,
             "dedup_hits": dedup, "wall_time_s": time.perf_counter() - t0}
    return CertResult(lower=lower, upper=upper, exact=exact,
                      maximizers=maximizers, per_reference_leaf=breakdown,
                      contributions=contribs, stats=stats)


# ---------------------------------------------------------------------------
# Additive vs additive
# ---------------------------------------------------------------------------

def _difference_terms(space: FeatureSpace, f: AdditiveModel,
                      f0: AdditiveModel) -> AdditiveModel:
    """Termwise f - f0 as an additive model (identity link).

    Linear-vs-step mixtures on one feature are folded into a step term plus a
    linear part; the extremizer evaluates both plateau endpoints, so the
    reported value is the supremum (attained except exactly at a step edge).
    """
    terms = {}
    for j in range(space.dim):
        a = f.terms.get(j)
        b = f0.terms.get(j)
        if a is None and b is None:
            continue
        terms[j] = _subtract_terms(space, j, a, b)
    return AdditiveModel(intercept=f.intercept - f0.intercept, terms=terms,
                         link="identity")


@dataclass(frozen=True)
class _AffineStepTerm:
    """w * x + step(x); used only for extremization of differences."""

    weight: float
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]


def _subtract_terms(space: FeatureSpace, j: int, a, b):
    feat = space.features[j]
    if isinstance(feat, CategoricalFeature):
        av = a.values if a is not None else {}
        bv = b.values if b is not None else {}
        return CategoryTableTerm({c: av.get(c, 0.0) - bv.get(c, 0.0)
                                  for c in feat.categories})
    aw = a.weight if isinstance(a, LinearTerm) else 0.0
    bw = b.weight if isinstance(b, LinearTerm) else 0.0
    asteps = a if isinstance(a, PiecewiseConstantTerm) else None
    bsteps = b if isinstance(b, PiecewiseConstantTerm) else None
    w = aw - bw
    if asteps is None and bsteps is None:
        return LinearTerm(w)
    bps = sorted(set((asteps.breakpoints if asteps else ()) +
                     (bsteps.breakpoints if bsteps else ())))
    vals = []
    for i in range(len(bps) + 1):
        x = bps[i - 1] if i > 0 else (bps[0] - 1.0 if bps else 0.0)
        va = asteps.value_at(x) if asteps else 0.0
        vb = bsteps.value_at(x) if bsteps else 0.0
        vals.append(va - vb)
    if w == 0.0:
        return PiecewiseConstantTerm(tuple(bps), tuple(vals))
    return _AffineStepTerm(w, tuple(bps), tuple(vals))


def _extremize_affine_step(term: _AffineStepTerm, iv: Interval,
                           sense: int) -> _Extreme:
    bps = term.breakpoints
    first = int(np.searchsorted(bps, iv.lo, side="right"))
    last = int(np.searchsorted(bps, iv.hi, side="right"))
    best = None
    best_at = None
    n = 0
    for i in range(first, last + 1):
        lo_i = max(iv.lo, bps[i - 1] if i > 0 else NINF)
        hi_i = min(iv.hi, bps[i] if i < len(bps) else PINF)
        n += 1
        for x in (lo_i, hi_i):
            v = term.weight * x + term.values[i]
            if best is None or sense * v > sense * best:
                best, best_at = v, x
    return _Extreme(best, Interval(best_at, best_at), n)


def certify_additive_vs_additive(space: FeatureSpace, f: AdditiveModel,
                                 f0: AdditiveModel, D: DeviationFn,
                                 certset: CertificationSet) -> CertResult:
    """Max deviation between two identity-link additive models.

    The difference is itself additive, so the maximum is
    max(D(M+), D(M-)) of the difference score over each region. For pure
    GLM differences over continuous features, l-1 and l-2 ball unions are
    handled exactly through the closed-form linear maximization, provided the
    balls stay inside the feature bounds.
    """
    if f.link != "identity" or f0.link != "identity":
        raise AssumptionViolated(
            "additive-vs-additive certification needs identity links; "
            "compare on the link scale instead")
    if not (D.satisfies_difference and D.satisfies_monotone):
        raise AssumptionViolated(
            "additive-vs-additive certification needs a monotone "
            "difference-type deviation")
    t0 = time.perf_counter()
    diff = _difference_terms(space, f, f0)

    if isinstance(certset, BallUnion) and certset.norm != PINF:
        res = _glm_lp_ball_certify(space, diff, D, certset, t0)
        if res is not None:
            return res
        floor = certify_additive_vs_additive(
            space, f, f0, D, FiniteSet(certset.centers))
        over = certify_additive_vs_additive(
            space, f, f0, D, overapprox_linf(certset))
        over.lower = floor.lower
        over.exact = False
        over.stats["overapproximated_norm"] = certset.norm
        return over

    regions, dedup = _regions_for_certset(space, full_box(space), certset)
    if not regions:
        raise EmptyCertSet("no ball intersects the feature space")

    best = -math.inf
    maximizers: list[Maximizer] = []
    win_contribs: list[FeatureContribution] = []
    n_segs = 0
    for box, ids in regions:
        for sense in ("max", "min"):
            out = _extremize_difference(space, diff, box, sense)
            n_segs += out.segment_evals
            val = D.of_difference(out.value)
            if val > best + TIE_TOL:
                best = val
                maximizers = [Maximizer(out.argmax, val, ids, {"sense": sense})]
                win_contribs = out.contributions
            elif val >= best - TIE_TOL:
                maximizers.append(Maximizer(out.argmax, val, ids,
                                            {"sense": sense}))
    contribs = sorted(win_contribs,
                      key=lambda c: (-abs(c.contribution), c.feature))
    stats = {"extremizations": 2 * len(regions), "segment_evals": n_segs,
             "dedup_hits": dedup, "wall_time_s": time.perf_counter() - t0}
    return CertResult(lower=best, upper=best, exact=True,
                      maximizers=maximizers, contributions=contribs,
                      stats=stats)


def _extremize_difference(space: FeatureSpace, diff: AdditiveModel, box: Box,
                          sense: str) -> ExtremizeOutcome:
    sgn = 1 if sense == "max" else -1
    total = diff.intercept
    comps = []
    contribs = []
    evals = 0
    for j, comp in enumerate(box.components):
        term = diff.terms.get(j)
        if isinstance(term, _AffineStepTerm):
            ext = _extremize_affine_step(term, comp, sgn)
        else:
            ext = _extremize_component(term, comp, sgn)
        total += ext.value
        comps.append(ext.extremizer)
        contribs.append(FeatureContribution(j, ext.value, ext.extremizer))
        evals += ext.segment_evals
    return ExtremizeOutcome(total, Box(tuple(comps)), contribs, evals)


def _glm_lp_ball_certify(space: FeatureSpace, diff: AdditiveModel,
                         D: DeviationFn, certset: BallUnion,
                         t0: float) -> CertResult | None:
    """Closed-form l-1/l-2 path; None when the structure does not allow it."""
    if any(not isinstance(fs, ContinuousFeature) for fs in space.features):
        return None
    if any(not isinstance(t, LinearTerm) for t in diff.terms.values()):
        return None
    w = np.zeros(space.dim)
    for j, t in diff.terms.items():
        w[j] = t.weight
    bounds = full_box(space)
    for c in certset.centers:
        arr = np.asarray(c, dtype=float)
        for j, comp in enumerate(bounds.components):
            if arr[j] - certset.radius < comp.lo - 1e-12 or \
               arr[j] + certset.radius > comp.hi + 1e-12:
                return None  # ball leaves the bounds; closed form invalid
    best = -math.inf
    maximizers = []
    for i, c in enumerate(certset.centers):
        arr = np.asarray(c, dtype=float)
        m_hi = diff.intercept + linear_max_over_lp_ball(
            w, arr, certset.radius, certset.norm)
        m_lo = diff.intercept - linear_max_over_lp_ball(
            -w, arr, certset.radius, certset.norm)
        for val, sense in ((D.of_difference(m_hi), "max"),
                           (D.of_difference(m_lo), "min")):
            if val > best + TIE_TOL:
                best = val
                maximizers = [Maximizer(
                    _point_box(arr), val, frozenset((i,)),
                    {"sense": sense, "closed_form": True})]
            elif val >= best - TIE_TOL:
                maximizers.append(Maximizer(
                    _point_box(arr), val, frozenset((i,)),
                    {"sense": sense, "closed_form": True}))
    stats = {"extremizations": 2 * len(certset.centers),
             "closed_form": True,
             "wall_time_s": time.perf_counter() - t0}
    return CertResult(lower=best, upper=best, exact=True,
                      maximizers=maximizers, stats=stats)


def _point_box(arr: np.ndarray) -> Box:
    return Box(tuple(Interval(float(v), float(v)) for v in arr))


# ---------------------------------------------------------------------------
# Robust loss
# ---------------------------------------------------------------------------

def robust_loss_additive(space: FeatureSpace, f: AdditiveModel, x, label: int,
                         eps: float, threshold: float = 0.0) -> int:
    """Worst-case 0-1 loss over the l-inf ball of radius eps around x.

    The label is +1 or -1; the decision rule is sign(score - threshold) on
    the link scale, with score == threshold counted as +1. The ball is
    clipped to the feature bounds.
    """
    if label not in (1, -1):
        raise SchemaMismatch("label must be +1 or -1")
    box = clip_box_to_ball(full_box(space), tuple(x), eps)
    if box is None:
        raise EmptyRegion("perturbation ball misses the feature space")
    if label == 1:
        worst = extremize_additive(space, f, box, "min").value
        return 1 if worst < threshold else 0
    worst = extremize_additive(space, f, box, "max").value
    return 1 if worst >= threshold else 0


def robust_accuracy_additive(space: FeatureSpace, f: AdditiveModel, points,
                             labels, eps: float,
                             threshold: float = 0.0) -> float:
    losses = [robust_loss_additive(space, f, p, int(y), eps, threshold)
              for p, y in zip(points, labels)]
    if not losses:
        raise SchemaMismatch("empty dataset")
    return 1.0 - sum(losses) / len(losses)
