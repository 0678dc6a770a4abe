"""Box algebra and certification-set intersection predicates.

Everything here operates in normalized coordinates. An l-inf ball is itself a
box: per continuous feature the interval [c - r, c + r], and per categorical
feature either the center's category pinned (r < 1) or the full category set
(r >= 1), because a category change costs exactly 1 in one-hot l-inf distance.
Exact box-ball tests therefore exist only for p = inf; for p in {1, 2} the
bounding l-inf box gives a sound over-approximation and callers must flag
results as inexact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import SchemaMismatch, UnsupportedNorm
from .types import (
    BallUnion,
    Box,
    CategorySet,
    CertificationSet,
    FiniteSet,
    FullSpace,
    Interval,
    PINF,
    Point,
)

# One-hot flip threshold: a category change moves two coordinates by 1 each,
# so its l-inf cost is exactly 1.
CATEGORY_FLIP_RADIUS = 1.0


def box_intersect(a: Box, b: Box) -> Box | None:
    """Componentwise intersection; None iff empty (closed semantics)."""
    if len(a) != len(b):
        raise SchemaMismatch("boxes over different spaces")
    comps = []
    for ca, cb in zip(a.components, b.components):
        if type(ca) is not type(cb):
            raise SchemaMismatch("component kind mismatch")
        c = ca.intersect(cb)
        if c.is_empty():
            return None
        comps.append(c)
    return Box(tuple(comps))


def leaf_overlap(a: Box, b: Box) -> Box | None:
    """Intersection for leaf-pair adjacency: boundary touching is not overlap.

    Two leaves of one tree share split boundaries but do not intersect; the
    same convention applies across trees, so a zero-width touch on a
    continuous axis yields None unless one side is itself zero-width there
    (a degenerate slab can only ever touch).
    """
    if len(a) != len(b):
        raise SchemaMismatch("boxes over different spaces")
    comps = []
    for ca, cb in zip(a.components, b.components):
        if type(ca) is not type(cb):
            raise SchemaMismatch("component kind mismatch")
        c = ca.intersect(cb)
        if c.is_empty():
            return None
        if isinstance(c, Interval) and c.lo == c.hi:
            if ca.lo < ca.hi and cb.lo < cb.hi:
                return None
        comps.append(c)
    return Box(tuple(comps))


def clip_box_to_ball(b: Box, center: Point, r: float) -> Box | None:
    """b intersected with the l-inf ball around center; None iff empty."""
    if len(center) != len(b):
        raise SchemaMismatch("center arity does not match the box")
    comps = []
    for comp, v in zip(b.components, center):
        if isinstance(comp, Interval):
            c = comp.intersect(Interval(v - r, v + r))
        else:
            if r < CATEGORY_FLIP_RADIUS:
                c = comp.intersect(CategorySet(frozenset((v,))))
            else:
                c = comp
        if c.is_empty():
            return None
        comps.append(c)
    return Box(tuple(comps))


@dataclass(frozen=True)
class MeetResult:
    nonempty: bool
    witness_ball_ids: frozenset[int]


def box_meets_certset(b: Box, certset: CertificationSet,
                      candidates: Iterable[int] | None = None) -> MeetResult:
    """Does the box meet the certification set, and through which balls/points?

    For a BallUnion the union meets b iff some single ball does, so the
    witness ids list every intersecting ball. `candidates` restricts which
    ball/point indices are tested (an optimization for callers that already
    know a superset).
    """
    if b.is_empty():
        return MeetResult(False, frozenset())
    if isinstance(certset, FullSpace):
        return MeetResult(True, frozenset())
    if isinstance(certset, FiniteSet):
        ids = range(len(certset.points)) if candidates is None else candidates
        hits = frozenset(i for i in ids if b.contains(certset.points[i]))
        return MeetResult(bool(hits), hits)
    if isinstance(certset, BallUnion):
        if certset.norm != PINF:
            raise UnsupportedNorm(
                "exact box tests exist only for the l-inf norm; "
                "use an l-inf over-approximation for p in {1, 2}")
        ids = range(len(certset.centers)) if candidates is None else candidates
        hits = frozenset(
            i for i in ids
            if clip_box_to_ball(b, certset.centers[i], certset.radius) is not None)
        return MeetResult(bool(hits), hits)
    raise SchemaMismatch(f"unknown certification set {certset!r}")


def overapprox_linf(certset: CertificationSet) -> CertificationSet:
    """Replace an l-p BallUnion by its bounding l-inf one (a superset)."""
    if isinstance(certset, BallUnion) and certset.norm != PINF:
        return BallUnion(certset.centers, certset.radius, PINF)
    return certset


def linear_max_over_lp_ball(w: np.ndarray, center: np.ndarray, r: float,
                            p: float) -> float:
    """max of w.x over the l-p ball: w.center + r * dual norm of w."""
    w = np.asarray(w, dtype=float)
    center = np.asarray(center, dtype=float)
    if w.shape != center.shape:
        raise SchemaMismatch("weight/center shape mismatch")
    base = float(w @ center)
    if p == 1:
        dual = float(np.max(np.abs(w))) if w.size else 0.0
    elif p == 2:
        dual = float(np.linalg.norm(w))
    elif p == PINF:
        dual = float(np.sum(np.abs(w)))
    else:
        raise UnsupportedNorm(f"no closed form for p={p}")
    return base + r * dual


def certset_filter_ids(certset: CertificationSet) -> list[int] | None:
    """All ball/point indices, or None when the set is the full space."""
    if isinstance(certset, FullSpace):
        return None
    if isinstance(certset, FiniteSet):
        return list(range(len(certset.points)))
    return list(range(len(certset.centers)))
