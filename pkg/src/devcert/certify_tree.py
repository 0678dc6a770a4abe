"""Exact maximum deviation for a pair of decision trees.

The maximization reduces to the bipartite edge set of leaf pairs whose
intersection meets the certification set: the answer is the largest
D(y_l, y0_m) over those edges, at most L * L0 of them. Leaf pairs are
screened with vectorized interval/category-set overlap tests, chunked over
the leaves of the assessed model, so the 10^6-edge scale stays sub-second.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass

import numpy as np

from .errors import EmptyCertSet
from .geometry import (
    box_intersect,
    box_meets_certset,
    clip_box_to_ball,
    overapprox_linf,
)
from .models import DecisionTree
from .results import CertResult, LeafBreakdown, Maximizer
from .types import (
    BallUnion,
    Box,
    CertificationSet,
    DeviationFn,
    FeatureSpace,
    FiniteSet,
    FullSpace,
    PINF,
)

TIE_TOL = 1e-12
MAX_REPORTED_TIES = 1000
_CHUNK = 256


@dataclass
class _LeafArrays:
    """Column-major view of a tree's (filtered) leaf list."""

    indices: list[int]
    cont_lo: np.ndarray  # (L, n_continuous)
    cont_hi: np.ndarray
    cats: list[np.ndarray]  # per categorical feature: (L, n_categories) bool
    values: np.ndarray  # (L,)
    boxes: list[Box]


def _leaf_arrays(space: FeatureSpace, tree: DecisionTree,
                 keep: list[int]) -> _LeafArrays:
    cont_idx = space.continuous_indices()
    cat_idx = space.categorical_indices()
    n = len(keep)
    lo = np.empty((n, len(cont_idx)))
    hi = np.empty((n, len(cont_idx)))
    cats = [np.zeros((n, len(space.features[j].categories)), dtype=bool)
            for j in cat_idx]
    values = np.empty(n)
    boxes = []
    for row, li in enumerate(keep):
        leaf = tree.leaves[li]
        boxes.append(leaf.region)
        values[row] = leaf.value
        for c, j in enumerate(cont_idx):
            comp = leaf.region.components[j]
            lo[row, c] = comp.lo
            hi[row, c] = comp.hi
        for c, j in enumerate(cat_idx):
            feat = space.features[j]
            comp = leaf.region.components[j]
            for k, cat in enumerate(feat.categories):
                cats[c][row, k] = cat in comp.members
    return _LeafArrays(list(keep), lo, hi, cats, values, boxes)


def _certset_arrays(space: FeatureSpace, certset: CertificationSet):
    """Centers/points as (n, dc) float and per-cat (n, n_categories) bool."""
    if isinstance(certset, FullSpace):
        return None
    pts = certset.points if isinstance(certset, FiniteSet) else certset.centers
    r = 0.0 if isinstance(certset, FiniteSet) else certset.radius
    cont_idx = space.continuous_indices()
    cat_idx = space.categorical_indices()
    n = len(pts)
    lo = np.empty((n, len(cont_idx)))
    hi = np.empty((n, len(cont_idx)))
    cats = [np.zeros((n, len(space.features[j].categories)), dtype=bool)
            for j in cat_idx]
    for i, p in enumerate(pts):
        for c, j in enumerate(cont_idx):
            lo[i, c] = p[j] - r
            hi[i, c] = p[j] + r
        for c, j in enumerate(cat_idx):
            feat = space.features[j]
            if r < 1.0:
                cats[c][i, feat.categories.index(p[j])] = True
            else:
                cats[c][i, :] = True
    return lo, hi, cats


def _filter_leaves(space: FeatureSpace, tree: DecisionTree,
                   certset: CertificationSet) -> list[int]:
    if isinstance(certset, FullSpace):
        return [i for i, l in enumerate(tree.leaves) if not l.region.is_empty()]
    return [i for i, l in enumerate(tree.leaves)
            if box_meets_certset(l.region, certset).nonempty]


def _dev_matrix(D: DeviationFn, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if D.kind in ("abs", "pow"):
        m = np.abs(a[:, None] - b[None, :])
        if D.kind == "pow":
            m = m ** D.power
        return m
    out = np.empty((len(a), len(b)))
    for i, ai in enumerate(a):
        for j, bj in enumerate(b):
            out[i, j] = D.value(ai, bj)
    return out


def certify_tree_tree(space: FeatureSpace, f: DecisionTree, f0: DecisionTree,
                      D: DeviationFn, certset: CertificationSet) -> CertResult:
    """Exact max deviation over leaf-pair edges; lower == upper always.

    For l-p ball unions with p in {1, 2} the bounding l-inf boxes are used:
    the returned upper bound stays valid, the lower bound falls back to the
    finite set of centers, and the result is flagged inexact.
    """
    t0 = time.perf_counter()
    exact = True
    lower_floor = None
    if isinstance(certset, BallUnion) and certset.norm != PINF:
        exact = False
        centers = FiniteSet(certset.points if isinstance(certset, FiniteSet)
                            else certset.centers)
        lower_floor = certify_tree_tree(space, f, f0, D, centers).lower
        certset = overapprox_linf(certset)

    keep_f = _filter_leaves(space, f, certset)
    keep_0 = _filter_leaves(space, f0, certset)
    if not keep_f or not keep_0:
        raise EmptyCertSet("no leaf pair meets the certification set")

    A = _leaf_arrays(space, f, keep_f)
    B = _leaf_arrays(space, f0, keep_0)
    C = _certset_arrays(space, certset)

    n0 = len(B.indices)
    best = -np.inf
    arg_pairs: list[tuple[int, int, float]] = []  # (row in A, col in B, dev)
    ties_truncated = False
    edges = 0
    col_best = np.full(n0, -np.inf)
    col_arg = np.full(n0, -1, dtype=int)
    col_fmin = np.full(n0, np.inf)
    col_fmax = np.full(n0, -np.inf)

    starts = list(range(0, len(A.indices), _CHUNK))
    workers = _worker_count()
    if workers > 1 and len(starts) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(
                lambda s: _process_chunk(A, B, C, D, s,
                                         min(s + _CHUNK, len(A.indices))),
                starts))
    else:
        chunks = (_process_chunk(A, B, C, D, s,
                                 min(s + _CHUNK, len(A.indices)))
                  for s in starts)

    # merge in chunk order so tie reporting stays deterministic
    for chunk in chunks:
        if chunk is None:
            continue
        start, n_edges, dev, ok = chunk
        edges += n_edges

        fv = np.where(ok, A.values[start:start + ok.shape[0], None],
                      np.inf).min(axis=0)
        np.minimum(col_fmin, fv, out=col_fmin)
        fv = np.where(ok, A.values[start:start + ok.shape[0], None],
                      -np.inf).max(axis=0)
        np.maximum(col_fmax, fv, out=col_fmax)

        cmax = dev.max(axis=0)
        improved = cmax > col_best
        col_arg[improved] = dev.argmax(axis=0)[improved] + start
        col_best[improved] = cmax[improved]

        chunk_best = float(dev.max())
        if chunk_best > best - TIE_TOL:
            cutoff = max(best, chunk_best) - TIE_TOL
            rows, cols = np.nonzero(dev >= cutoff)
            if chunk_best > best:
                best = chunk_best
                arg_pairs = [p for p in arg_pairs if p[2] >= best - TIE_TOL]
            for ri, ci in zip(rows, cols):
                if len(arg_pairs) < MAX_REPORTED_TIES:
                    arg_pairs.append((int(ri) + start, int(ci), float(dev[ri, ci])))
                else:
                    ties_truncated = True

    if edges == 0:
        raise EmptyCertSet("no leaf pair meets the certification set")

    arg_pairs = [p for p in arg_pairs if p[2] >= best - TIE_TOL]
    maximizers = []
    for ri, ci, val in arg_pairs:
        region = box_intersect(A.boxes[ri], B.boxes[ci])
        meet = box_meets_certset(region, certset)
        maximizers.append(Maximizer(
            box=_clip_to_witness(region, certset, meet.witness_ball_ids),
            value=val, witness_ball_ids=meet.witness_ball_ids,
            detail={"leaf": A.indices[ri], "reference_leaf": B.indices[ci]}))

    breakdown = []
    for col in range(n0):
        if col_arg[col] < 0:
            continue
        region = box_intersect(A.boxes[int(col_arg[col])], B.boxes[col])
        meet = box_meets_certset(region, certset)
        breakdown.append(LeafBreakdown(
            leaf_index=B.indices[col],
            reference_value=float(B.values[col]),
            deviation=float(col_best[col]),
            maximizer=_clip_to_witness(region, certset, meet.witness_ball_ids),
            model_min=float(col_fmin[col]),
            model_max=float(col_fmax[col]),
            leaf_box=B.boxes[col]))

    upper = float(best)
    lower = upper if exact else float(lower_floor)
    stats = {
        "pairs_screened": len(A.indices) * n0,
        "edges": edges,
        "ties": len(maximizers),
        "ties_truncated": ties_truncated,
        "wall_time_s": time.perf_counter() - t0,
    }
    return CertResult(lower=lower, upper=upper, exact=exact,
                      maximizers=maximizers, per_reference_leaf=breakdown,
                      stats=stats)


def _clip_to_witness(region: Box, certset: CertificationSet,
                     witness: frozenset[int]) -> Box:
    """Restrict an argmax region to its first witness ball, so reported
    maximizer boxes are subsets of the certification set."""
    if isinstance(certset, FullSpace) or not witness:
        return region
    i = min(witness)
    if isinstance(certset, FiniteSet):
        return clip_box_to_ball(region, certset.points[i], 0.0)
    return clip_box_to_ball(region, certset.centers[i], certset.radius)


def _worker_count() -> int:
    """DEVCERT_THREADS sizes the screening pool; default single-threaded."""
    raw = os.environ.get("DEVCERT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(n, 1)


def _process_chunk(A: _LeafArrays, B: _LeafArrays, C, D: DeviationFn,
                   start: int, stop: int):
    """Mask + deviation matrix for one chunk of f's leaves, or None."""
    ok = _pair_mask(A, B, C, start, stop)
    if not ok.any():
        return None
    dev = _dev_matrix(D, A.values[start:stop], B.values)
    dev[~ok] = -np.inf
    return start, int(ok.sum()), dev, ok


def _pair_mask(A: _LeafArrays, B: _LeafArrays, C, start: int, stop: int) -> np.ndarray:
    """(chunk, L0) mask: region nonempty and meets the certification set."""
    lo_f, hi_f = A.cont_lo[start:stop], A.cont_hi[start:stop]
    ok = np.ones((stop - start, len(B.indices)), dtype=bool)
    for c in range(lo_f.shape[1]):
        rlo = np.maximum.outer(lo_f[:, c], B.cont_lo[:, c])
        rhi = np.minimum.outer(hi_f[:, c], B.cont_hi[:, c])
        # boundary touching is not an edge unless a side is itself degenerate
        deg_a = (hi_f[:, c] == lo_f[:, c])[:, None]
        deg_b = (B.cont_hi[:, c] == B.cont_lo[:, c])[None, :]
        ok &= (rlo < rhi) | ((rlo <= rhi) & (deg_a | deg_b))
    pair_cats = []
    for c in range(len(A.cats)):
        inter = A.cats[c][start:stop][:, None, :] & B.cats[c][None, :, :]
        ok &= inter.any(axis=2)
        pair_cats.append(inter)
    if C is None or not ok.any():
        return ok
    clo, chi, ccats = C
    meets = np.zeros_like(ok)
    for b in range(clo.shape[0]):
        m = ok.copy()
        for c in range(lo_f.shape[1]):
            rlo = np.maximum.outer(lo_f[:, c], B.cont_lo[:, c])
            rhi = np.minimum.outer(hi_f[:, c], B.cont_hi[:, c])
            m &= np.maximum(rlo, clo[b, c]) <= np.minimum(rhi, chi[b, c])
            if not m.any():
                break
        else:
            for c in range(len(pair_cats)):
                m &= (pair_cats[c] & ccats[c][b][None, None, :]).any(axis=2)
        meets |= m
        if meets.all():
            break
    return ok & meets


def breakdown_by_reference_leaf(space: FeatureSpace, f: DecisionTree,
                                f0: DecisionTree, D: DeviationFn,
                                certset: CertificationSet) -> list[LeafBreakdown]:
    """Max deviation and maximizer grouped by reference leaf.

    Reference leaves that do not meet the certification set are absent; the
    max over groups equals the global maximum.
    """
    return certify_tree_tree(space, f, f0, D, certset).per_reference_leaf
