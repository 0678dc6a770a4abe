"""Anytime bounds for tree-ensemble deviation via k-partite clique search.

Leaves of the K ensemble trees and of the reference tree are vertices of a
(K+1)-partite graph; edges join leaves whose regions intersect. A clique
covering every partite is a feasible cell of the input space with a
computable deviation, so maximizing deviation is a sweep over cliques.

For a monotone difference-type deviation the search runs twice on the signed
objective s = post(aggregate of ensemble leaf values) - reference leaf value,
once maximizing s and once minimizing it. A partial clique is bounded by
completing each uncovered partite with its best compatible leaf
independently (compatible with the clique, not with each other); that
relaxation plus monotone aggregation makes the bound sound, and it equals
the exact value on full cliques. Branches whose bound cannot beat the
incumbent are pruned.

Two uses of the bound are kept apart deliberately. The branch-local test
drives pruning. The *reported* dual is maintained as a shrinking interval
[lo_bound, hi_bound] that always contains every clique's signed value:
hi_bound is the max of attained values and the bounds of all still-open
branches (symmetrically for lo_bound). A running max of branch bounds alone
could only grow and would not be a sound terminal upper bound; the frontier
form is, and it collapses onto the exact value when the search exhausts.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

from .errors import AssumptionViolated, EmptyCertSet, SchemaMismatch
from .geometry import (
    box_meets_certset,
    clip_box_to_ball,
    leaf_overlap,
    overapprox_linf,
)
from .models import DecisionTree, TreeEnsemble
from .results import BoundsStep, CertResult, Maximizer
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


@dataclass
class Budget:
    time_limit_s: float | None = None
    node_limit: int | None = None


@dataclass
class LeafGraph:
    """(K+1)-partite leaf-intersection graph, certification-set filtered."""

    space: FeatureSpace
    ensemble: TreeEnsemble
    reference: DecisionTree
    partites: list[list[int]]  # vertex ids per partite, smallest tree first
    ref_partite: int
    vertex_box: list[Box]
    vertex_value: list[float]
    vertex_partite: list[int]
    vertex_leaf: list[tuple[int, int]]  # (tree index, leaf index); ref = -1
    vertex_witness: list[frozenset[int] | None]
    adjacency: list[int]  # bitmask over vertex ids
    partite_mask: list[int]
    certset: CertificationSet

    @property
    def n_vertices(self) -> int:
        return len(self.vertex_box)

    @property
    def n_partites(self) -> int:
        return len(self.partites)

    def all_vertices_mask(self) -> int:
        return (1 << self.n_vertices) - 1


def build_leaf_graph(space: FeatureSpace, ensemble: TreeEnsemble,
                     reference: DecisionTree,
                     certset: CertificationSet) -> LeafGraph:
    """Filter leaves by the certification set and wire up adjacency."""
    if isinstance(certset, BallUnion) and certset.norm != PINF:
        raise SchemaMismatch("build the graph on an l-inf certification set")

    groups: list[tuple[int, DecisionTree]] = [(-1, reference)]
    groups += [(k, t) for k, t in enumerate(ensemble.trees)]

    vertex_box: list[Box] = []
    vertex_value: list[float] = []
    vertex_leaf: list[tuple[int, int]] = []
    vertex_witness: list[frozenset[int] | None] = []
    raw_partites: list[list[int]] = []
    for tree_id, tree in groups:
        members = []
        for leaf_idx, leaf in enumerate(tree.leaves):
            if leaf.region.is_empty():
                continue
            meet = box_meets_certset(leaf.region, certset)
            if not meet.nonempty:
                continue
            vid = len(vertex_box)
            vertex_box.append(leaf.region)
            vertex_value.append(leaf.value)
            vertex_leaf.append((tree_id, leaf_idx))
            vertex_witness.append(
                None if isinstance(certset, FullSpace) else meet.witness_ball_ids)
            members.append(vid)
        if not members:
            raise EmptyCertSet(
                f"tree {tree_id} has no leaf meeting the certification set")
        raw_partites.append(members)

    # smallest partite first; the reference tree wins ties
    order = sorted(range(len(raw_partites)),
                   key=lambda i: (len(raw_partites[i]), i))
    partites = [raw_partites[i] for i in order]
    ref_partite = order.index(0)
    vertex_partite = [0] * len(vertex_box)
    for p, members in enumerate(partites):
        for vid in members:
            vertex_partite[vid] = p

    adjacency = [0] * len(vertex_box)
    for p in range(len(partites)):
        for q in range(p + 1, len(partites)):
            for i in partites[p]:
                for j in partites[q]:
                    if leaf_overlap(vertex_box[i], vertex_box[j]) is not None:
                        adjacency[i] |= 1 << j
                        adjacency[j] |= 1 << i
    partite_mask = [sum(1 << v for v in members) for members in partites]
    return LeafGraph(space, ensemble, reference, partites, ref_partite,
                     vertex_box, vertex_value, vertex_partite, vertex_leaf,
                     vertex_witness, adjacency, partite_mask, certset)


# ---------------------------------------------------------------------------
# Signed bounds
# ---------------------------------------------------------------------------

def _iter_bits(mask: int) -> Iterator[int]:
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def _contribution(graph: LeafGraph, vid: int) -> float:
    """Aggregation-scale contribution of an ensemble leaf (0 for reference)."""
    tree_id, _ = graph.vertex_leaf[vid]
    if tree_id < 0:
        return 0.0
    if graph.ensemble.aggregation == "mean":
        return graph.vertex_value[vid] / len(graph.ensemble.trees)
    return graph.vertex_value[vid]


def _post(graph: LeafGraph, a: float) -> float:
    if graph.ensemble.post_link == "logistic":
        return 1.0 / (1.0 + math.exp(-a))
    return a


def _signed_bound(graph: LeafGraph, Z: int, uncovered: frozenset[int],
                  a_partial: float, y0: float | None, sign: int) -> float:
    """Sign-best completion bound of s = post(a) - y0 for a partial clique.

    Infeasible completions (an uncovered partite with no compatible leaf)
    come back as -inf for sign=+1 and +inf for sign=-1.
    """
    a = a_partial
    y0_bound = y0
    for t in uncovered:
        zt = Z & graph.partite_mask[t]
        if zt == 0:
            return -math.inf if sign > 0 else math.inf
        if t == graph.ref_partite:
            vals = [graph.vertex_value[v] for v in _iter_bits(zt)]
            y0_bound = min(vals) if sign > 0 else max(vals)
        else:
            contribs = [_contribution(graph, v) for v in _iter_bits(zt)]
            a += max(contribs) if sign > 0 else min(contribs)
    return _post(graph, a) - y0_bound


def _require_signed(D: DeviationFn) -> None:
    if not (D.satisfies_monotone and D.satisfies_difference):
        raise AssumptionViolated(
            "ensemble certification runs signed searches and needs a "
            "monotone difference-type deviation")


def heuristic_bound(graph: LeafGraph, D: DeviationFn,
                    clique: Sequence[int]) -> float:
    """Deviation-scale bound on every completion of a partial clique.

    Completes each uncovered partite with its most extreme leaf compatible
    with the clique (not with the other picks; that is the relaxation), in
    both signed directions, and maps the extremes through D. Equals the
    exact clique deviation when the clique is already full; -inf when some
    partite cannot be covered at all.
    """
    _require_signed(D)
    Z = graph.all_vertices_mask()
    covered = set()
    a = graph.ensemble.intercept
    y0 = None
    for v in clique:
        for u in clique:
            if u != v and not (graph.adjacency[v] >> u) & 1:
                raise SchemaMismatch("clique vertices are not pairwise adjacent")
        t = graph.vertex_partite[v]
        if t in covered:
            raise SchemaMismatch("two clique vertices share a partite")
        covered.add(t)
        Z &= graph.adjacency[v]
        if t == graph.ref_partite:
            y0 = graph.vertex_value[v]
        else:
            a += _contribution(graph, v)
    uncovered = frozenset(range(graph.n_partites)) - covered
    hi = _signed_bound(graph, Z, uncovered, a, y0, +1)
    if math.isinf(hi) and hi < 0:
        return -math.inf
    lo = _signed_bound(graph, Z, uncovered, a, y0, -1)
    return max(D.of_difference(hi), D.of_difference(lo))


# ---------------------------------------------------------------------------
# Search
# ---------------------------------------------------------------------------

@dataclass
class SearchState:
    """One signed run: sign=+1 maximizes s, sign=-1 minimizes it."""

    sign: int
    best_s: float | None = None  # signed value of the incumbent clique
    best_clique: list[int] = field(default_factory=list)
    best_box: Box | None = None
    best_witness: frozenset[int] | None = None
    # per-level (sign-adjusted child bounds, index of current child)
    frontier: list[tuple[list[float], int]] = field(default_factory=list)
    cliques_completed: int = 0
    nodes_expanded: int = 0
    heuristic_evals: int = 0
    exhausted: bool = True

    def incumbent_adj(self) -> float:
        """Sign-adjusted incumbent; -inf before the first clique."""
        return -math.inf if self.best_s is None else self.sign * self.best_s

    def frontier_adj(self) -> float:
        """Sign-adjusted bound over every branch still open in this run."""
        out = self.incumbent_adj()
        for hs, pos in self.frontier:
            if pos < len(hs):
                out = max(out, hs[pos])  # hs sorted descending
        return out


class _BudgetUp(Exception):
    pass


@dataclass
class _Bounds:
    """Shared, monotone bound state across both runs."""

    lo_bound: float  # every clique's s is >= lo_bound
    hi_bound: float  # ... and <= hi_bound
    attained_max: float = -math.inf
    attained_min: float = math.inf
    steps: int = 0

    def any_clique(self) -> bool:
        return self.attained_max > -math.inf

    def deviation_bounds(self, D: DeviationFn) -> tuple[float, float]:
        if self.any_clique():
            lb = max(D.of_difference(self.attained_max),
                     D.of_difference(self.attained_min))
        else:
            lb = 0.0
        ub = max(D.of_difference(self.lo_bound), D.of_difference(self.hi_bound))
        return lb, max(lb, ub)

    def tighten_hi(self, value: float) -> None:
        self.hi_bound = min(self.hi_bound, max(value, self.attained_max))

    def tighten_lo(self, value: float) -> None:
        self.lo_bound = max(self.lo_bound, min(value, self.attained_min))


class _Search:
    def __init__(self, graph: LeafGraph, D: DeviationFn, bounds: _Bounds,
                 deadline: float | None, node_cap: int | None,
                 trace: list[BoundsStep], on_step: Callable | None):
        self.g = graph
        self.D = D
        self.bounds = bounds
        self.deadline = deadline
        self.node_cap = node_cap
        self.trace = trace
        self.on_step = on_step
        cs = graph.certset
        self.ball_r = cs.radius if isinstance(cs, BallUnion) else 0.0
        if isinstance(cs, FullSpace):
            self.centers = None
        else:
            self.centers = cs.points if isinstance(cs, FiniteSet) else cs.centers

    def run(self, sign: int) -> SearchState:
        st = SearchState(sign=sign)
        Z = self.g.all_vertices_mask()
        uncovered = frozenset(range(self.g.n_partites))
        try:
            self._recurse(st, Z, uncovered, [], self.g.ensemble.intercept,
                          None, None, None)
        except _BudgetUp:
            st.exhausted = False
        self._record(st)  # frontier is empty on exhaustion: side is exact
        return st

    # -- bookkeeping ------------------------------------------------------

    def _tighten_from(self, st: SearchState) -> None:
        adj = st.frontier_adj()
        if st.sign > 0:
            self.bounds.tighten_hi(adj)
        else:
            self.bounds.tighten_lo(-adj)

    def _record(self, st: SearchState) -> None:
        self._tighten_from(st)
        lb, ub = self.bounds.deviation_bounds(self.D)
        step = BoundsStep(self.bounds.steps, lb, ub)
        self.bounds.steps += 1
        self.trace.append(step)
        if self.on_step is not None:
            self.on_step(step)

    def _checkpoint(self, st: SearchState) -> None:
        st.nodes_expanded += 1
        if self.node_cap is not None and st.nodes_expanded > self.node_cap:
            raise _BudgetUp
        if self.deadline is not None and st.nodes_expanded % 64 == 0 \
                and time.perf_counter() > self.deadline:
            raise _BudgetUp

    def _surviving_witness(self, box: Box, ids: frozenset[int]) -> frozenset[int]:
        return frozenset(b for b in ids
                         if clip_box_to_ball(box, self.centers[b],
                                             self.ball_r) is not None)

    # -- the DFS ----------------------------------------------------------

    def _recurse(self, st: SearchState, Z: int, uncovered: frozenset[int],
                 S: list[int], a: float, y0: float | None,
                 box: Box | None, witness: frozenset[int] | None) -> None:
        self._checkpoint(st)
        # fail-first: the uncovered partite with fewest compatible leaves
        t = min(uncovered,
                key=lambda p: ((Z & self.g.partite_mask[p]).bit_count(), p))
        rest = uncovered - {t}
        children = []
        for v in sorted(_iter_bits(Z & self.g.partite_mask[t])):
            vbox = self.g.vertex_box[v] if box is None \
                else leaf_overlap(box, self.g.vertex_box[v])
            if vbox is None:
                continue
            vwit = None
            if self.centers is not None:
                base = self.g.vertex_witness[v] if witness is None \
                    else witness & self.g.vertex_witness[v]
                vwit = self._surviving_witness(vbox, base)
                if not vwit:
                    continue  # no shared ball: infeasible, not a bound prune
            va = a + _contribution(self.g, v)
            vy0 = self.g.vertex_value[v] if t == self.g.ref_partite else y0
            if not rest:
                st.cliques_completed += 1
                self._attain(st, _post(self.g, va) - vy0, S + [v], vbox, vwit)
                continue
            vZ = Z & self.g.adjacency[v]
            h = _signed_bound(self.g, vZ, rest, va, vy0, st.sign)
            st.heuristic_evals += 1
            if math.isfinite(h):
                children.append((st.sign * h, v, vZ, va, vy0, vbox, vwit))
        if not children:
            return
        children.sort(key=lambda c: (-c[0], c[1]))
        hs = [c[0] for c in children]
        st.frontier.append((hs, 0))
        level = len(st.frontier) - 1
        for i, (h_adj, v, vZ, va, vy0, vbox, vwit) in enumerate(children):
            st.frontier[level] = (hs, i)  # child i still open while explored
            if h_adj <= st.incumbent_adj():
                st.frontier[level] = (hs, len(hs))  # the rest are no better
                self._record(st)
                break
            self._recurse(st, vZ, rest, S + [v], va, vy0, vbox, vwit)
            st.frontier[level] = (hs, i + 1)
        st.frontier.pop()

    def _attain(self, st: SearchState, s: float, clique: list[int],
                box: Box, witness: frozenset[int] | None) -> None:
        self.bounds.attained_max = max(self.bounds.attained_max, s)
        self.bounds.attained_min = min(self.bounds.attained_min, s)
        if st.sign * s > st.incumbent_adj():
            st.best_s = s
            st.best_clique = list(clique)
            st.best_box = box
            st.best_witness = witness
            self._record(st)


def certify_ensemble_vs_tree(space: FeatureSpace, f: TreeEnsemble,
                             f0: DecisionTree, D: DeviationFn,
                             certset: CertificationSet,
                             budget: Budget | None = None,
                             on_step: Callable | None = None) -> CertResult:
    """Anytime lower/upper deviation bounds; exact when run to completion.

    On budget expiry the result carries (best attained, frontier dual) with
    exact=False; expiring is not an error. l-1/l-2 ball unions go through
    the bounding l-inf boxes: the upper bound stays valid and the lower
    bound falls back to the ball centers.
    """
    _require_signed(D)
    t0 = time.perf_counter()
    budget = budget or Budget()

    lower_floor = None
    inexact_norm = False
    if isinstance(certset, BallUnion) and certset.norm != PINF:
        inexact_norm = True
        floor = certify_ensemble_vs_tree(
            space, f, f0, D, FiniteSet(certset.centers), budget=budget)
        lower_floor = floor.lower
        certset = overapprox_linf(certset)

    graph = build_leaf_graph(space, f, f0, certset)
    uncovered = frozenset(range(graph.n_partites))
    Z_all = graph.all_vertices_mask()
    root_hi = _signed_bound(graph, Z_all, uncovered, f.intercept, None, +1)
    root_lo = _signed_bound(graph, Z_all, uncovered, f.intercept, None, -1)
    bounds = _Bounds(lo_bound=root_lo, hi_bound=root_hi)
    trace: list[BoundsStep] = []

    deadline = None if budget.time_limit_s is None else t0 + budget.time_limit_s
    half = None if budget.time_limit_s is None else t0 + budget.time_limit_s / 2
    node_cap = None if budget.node_limit is None else max(budget.node_limit // 2, 1)

    lb0, ub0 = bounds.deviation_bounds(D)
    trace.append(BoundsStep(bounds.steps, lb0, ub0))
    bounds.steps += 1

    st_max = _Search(graph, D, bounds, half, node_cap, trace, on_step).run(+1)
    st_min = _Search(graph, D, bounds, deadline, node_cap, trace, on_step).run(-1)

    exhausted = st_max.exhausted and st_min.exhausted
    if not bounds.any_clique() and exhausted:
        raise EmptyCertSet("no leaf combination meets the certification set")

    lb, ub = bounds.deviation_bounds(D)
    exact = exhausted and not inexact_norm
    if exact:
        ub = lb
    lower = lb if not inexact_norm else float(lower_floor)

    maximizers = []
    for st in (st_max, st_min):
        if st.best_s is None:
            continue
        val = D.of_difference(st.best_s)
        if val >= lb - 1e-12:
            box = st.best_box
            if st.best_witness:
                cs = graph.certset
                centers = cs.points if isinstance(cs, FiniteSet) else cs.centers
                r = cs.radius if isinstance(cs, BallUnion) else 0.0
                box = clip_box_to_ball(box, centers[min(st.best_witness)], r)
            maximizers.append(Maximizer(
                box=box, value=val,
                witness_ball_ids=st.best_witness or frozenset(),
                detail={"leaves": [graph.vertex_leaf[v] for v in st.best_clique],
                        "sense": "max" if st.sign > 0 else "min",
                        "signed_difference": st.best_s}))
    stats = {
        "cliques_completed": st_max.cliques_completed + st_min.cliques_completed,
        "nodes_expanded": st_max.nodes_expanded + st_min.nodes_expanded,
        "heuristic_evals": st_max.heuristic_evals + st_min.heuristic_evals,
        "graph_vertices": graph.n_vertices,
        "budget_expired": not exhausted,
        "wall_time_s": time.perf_counter() - t0,
    }
    return CertResult(lower=lower, upper=ub, exact=exact,
                      maximizers=maximizers, stats=stats, trace=trace)


# ---------------------------------------------------------------------------
# Exhaustive enumeration (oracle and pruning baseline)
# ---------------------------------------------------------------------------

def enumerate_cliques(graph: LeafGraph
                      ) -> Iterator[tuple[list[int], Box, frozenset[int] | None]]:
    """Every full clique with a nonempty common region meeting the certset.

    No pruning: this is the baseline that pruning statistics compare
    against, and the oracle for exactness tests.
    """
    cs = graph.certset
    r = cs.radius if isinstance(cs, BallUnion) else 0.0
    if isinstance(cs, FullSpace):
        centers = None
    else:
        centers = cs.points if isinstance(cs, FiniteSet) else cs.centers

    def rec(level: int, Z: int, S: list[int], box: Box | None,
            witness: frozenset[int] | None):
        if level == graph.n_partites:
            yield list(S), box, witness
            return
        for v in sorted(_iter_bits(Z & graph.partite_mask[level])):
            vbox = graph.vertex_box[v] if box is None \
                else leaf_overlap(box, graph.vertex_box[v])
            if vbox is None:
                continue
            vwit = None
            if centers is not None:
                base = graph.vertex_witness[v] if witness is None \
                    else witness & graph.vertex_witness[v]
                vwit = frozenset(
                    b for b in base
                    if clip_box_to_ball(vbox, centers[b], r) is not None)
                if not vwit:
                    continue
            yield from rec(level + 1, Z & graph.adjacency[v], S + [v],
                           vbox, vwit)

    yield from rec(0, graph.all_vertices_mask(), [], None, None)


def clique_deviation(graph: LeafGraph, D: DeviationFn,
                     clique: Sequence[int]) -> float:
    """Exact deviation of a full clique."""
    y0 = None
    contribs = []
    for v in clique:
        tree_id, _ = graph.vertex_leaf[v]
        if tree_id < 0:
            y0 = graph.vertex_value[v]
        else:
            contribs.append(graph.vertex_value[v])
    if y0 is None or len(contribs) != len(graph.ensemble.trees):
        raise SchemaMismatch("clique must cover every partite exactly once")
    return D.value(graph.ensemble.aggregate(contribs), y0)
