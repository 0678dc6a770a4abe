"""Query-based maximization of a difference function over boxes.

The optimizer is a hierarchical bisection search with optimistic node
selection: each tree node owns a sub-box, is scored by an upper index
(value estimate + confidence width + smoothness-times-diameter term), and
the highest-index leaf is split next. The metric is the normalized l-inf
distance, under which a box's diameter is its longest standardized edge and
any two distinct categories are 1 apart, so categorical components are
split by halving the category set.

When both models behind the difference are piecewise smooth, their overlaid
partitions give cells where the difference has a certified Hoelder bound
(2 max(c0, c1) of order min(beta0, beta1)); splitting the query budget
across cells and searching each one independently is what makes the
partition-aware mode beat the flat search, and piecewise-constant cells
(c = 0) collapse to a single query each.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    BudgetTooSmall,
    EmptyRegion,
    OracleFailure,
    SchemaMismatch,
    UnsupportedPair,
)
from .models import (
    AdditiveModel,
    DecisionTree,
    LinearTerm,
    Model,
    TreeEnsemble,
    predict,
)
from .geometry import box_intersect
from .types import (
    Box,
    CategorySet,
    FeatureSpace,
    Interval,
    Point,
    full_box,
)

Oracle = Callable[[Point], float]


@dataclass(frozen=True)
class PartitionCell:
    box: Box
    c: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.c < 0:
            raise SchemaMismatch("smoothness constant must be >= 0")
        if not 0 < self.beta <= 1:
            raise SchemaMismatch("smoothness order must be in (0, 1]")


@dataclass(frozen=True)
class PartitionSpec:
    cells: tuple[PartitionCell, ...]

    @property
    def size(self) -> int:
        return len(self.cells)


@dataclass
class OptRun:
    queries_used: int
    best_point: Point
    best_value: float
    regret_curve: list[float]  # best observed value after each query


def combine_lipschitz(c0: float, beta0: float, c1: float,
                      beta1: float) -> tuple[float, float]:
    """Certified smoothness of a difference of two Hoelder functions.

    |h0 - h1| moves by at most c0 l^b0 + c1 l^b1 <= 2 max(c0,c1) l^min(b0,b1)
    under a metric normalized to diameter <= 1.
    """
    for b in (beta0, beta1):
        if not 0 < b <= 1:
            raise SchemaMismatch("smoothness orders must be in (0, 1]")
    if c0 < 0 or c1 < 0:
        raise SchemaMismatch("smoothness constants must be >= 0")
    return 2.0 * max(c0, c1), min(beta0, beta1)


# ---------------------------------------------------------------------------
# Box bisection
# ---------------------------------------------------------------------------

def _component_length(comp) -> float:
    if isinstance(comp, Interval):
        return comp.hi - comp.lo
    return 1.0 if len(comp.members) > 1 else 0.0


def box_diameter(box: Box) -> float:
    """l-inf diameter under the normalized metric."""
    return max((_component_length(c) for c in box.components), default=0.0)


def box_center(box: Box) -> Point:
    out = []
    for comp in box.components:
        if isinstance(comp, Interval):
            out.append(0.5 * (comp.lo + comp.hi))
        else:
            out.append(sorted(comp.members)[0])
    return tuple(out)


def split_box(box: Box) -> tuple[Box, Box] | None:
    """Bisect along the longest edge; None if the box is a single point."""
    lengths = [_component_length(c) for c in box.components]
    j = max(range(len(lengths)), key=lambda i: (lengths[i], -i))
    if lengths[j] <= 0.0:
        return None
    comp = box.components[j]
    if isinstance(comp, Interval):
        mid = 0.5 * (comp.lo + comp.hi)
        a, b = Interval(comp.lo, mid), Interval(mid, comp.hi)
    else:
        members = sorted(comp.members)
        half = len(members) // 2
        a = CategorySet(frozenset(members[:half]))
        b = CategorySet(frozenset(members[half:]))
    left = list(box.components)
    right = list(box.components)
    left[j], right[j] = a, b
    return Box(tuple(left)), Box(tuple(right))


# ---------------------------------------------------------------------------
# Hierarchical optimistic search
# ---------------------------------------------------------------------------

@dataclass
class _Node:
    box: Box
    depth: int
    value: float | None = None  # deterministic observation or running mean
    visits: int = 0
    children: list["_Node"] = field(default_factory=list)


def _query(delta: Oracle, point: Point) -> float:
    try:
        v = float(delta(point))
    except Exception as exc:  # noqa: BLE001 - oracle is foreign code
        raise OracleFailure(f"oracle failed at {point!r}: {exc}") from exc
    if math.isnan(v):
        raise OracleFailure(f"oracle returned NaN at {point!r}")
    return v


def hoo_maximize(delta: Oracle, region: Box, budget: int,
                 noise: str = "deterministic", c: float = 1.0,
                 beta: float = 1.0, exploration: float = 1.0) -> OptRun:
    """Maximize an oracle over a box within a query budget.

    noise="deterministic" queries each node's center once and uses zero
    confidence width; noise="bounded-variance" keeps running means and a
    sqrt(2 ln t / n) width. The reported value is always the best observed
    query, never an extrapolation.
    """
    if region.is_empty():
        raise EmptyRegion("cannot optimize over an empty region")
    if budget < 1:
        raise BudgetTooSmall("need at least one query")
    if noise not in ("deterministic", "bounded-variance"):
        raise SchemaMismatch(f"unknown noise model {noise!r}")

    best_point = None
    best_value = -math.inf
    curve: list[float] = []
    queries = 0

    def observe(node: _Node) -> None:
        nonlocal best_point, best_value, queries
        point = box_center(node.box)
        v = _query(delta, point)
        queries += 1
        node.visits += 1
        if node.value is None or noise == "deterministic":
            node.value = v
        else:
            node.value += (v - node.value) / node.visits
        if v > best_value:
            best_value, best_point = v, point
        curve.append(best_value)

    root = _Node(region, 0)
    observe(root)
    open_leaves = [root]

    def index(node: _Node) -> float:
        bonus = c * box_diameter(node.box) ** beta
        width = 0.0
        if noise == "bounded-variance" and node.visits > 0:
            width = exploration * math.sqrt(
                2.0 * math.log(max(queries, 2)) / node.visits)
        return node.value + width + bonus

    while queries < budget:
        splittable = [n for n in open_leaves if split_box(n.box) is not None]
        if not splittable:
            break  # single-point cells only; nothing left to refine
        node = max(splittable, key=lambda n: (index(n), -n.depth))
        if noise == "bounded-variance" and node.visits < 2:
            observe(node)  # second sample sharpens the mean before splitting
            continue
        open_leaves.remove(node)
        halves = split_box(node.box)
        for half in halves:
            child = _Node(half, node.depth + 1)
            child.value = node.value  # inherit until observed
            node.children.append(child)
            open_leaves.append(child)
            if queries < budget:
                observe(child)
    return OptRun(queries, best_point, best_value, curve)


def partitioned_maximize(delta: Oracle, partition: PartitionSpec, budget: int,
                         noise: str = "deterministic",
                         exploration: float = 1.0) -> OptRun:
    """Split the budget equally over partition cells and search each one.

    Piecewise-constant cells (c = 0) are charged a single query; the budget
    they free up goes to the largest remaining cells. Leftover queries from
    integer division also go largest-first.
    """
    cells = partition.cells
    if not cells:
        raise EmptyRegion("partition has no cells")
    pi = len(cells)
    if budget < pi:
        raise BudgetTooSmall(f"budget {budget} below the {pi} partition cells")

    budgets = [budget // pi] * pi
    spare = budget % pi
    by_size = sorted(range(pi),
                     key=lambda i: (-box_diameter(cells[i].box), i))
    for i in range(spare):
        budgets[by_size[i % pi]] += 1
    # constant cells need exactly one query; hand the rest to curvy cells
    spare = 0
    for i, cell in enumerate(cells):
        if cell.c == 0.0 and budgets[i] > 1:
            spare += budgets[i] - 1
            budgets[i] = 1
    curvy = [i for i in by_size if cells[i].c > 0.0]
    k = 0
    while spare > 0 and curvy:
        budgets[curvy[k % len(curvy)]] += 1
        spare -= 1
        k += 1

    best_point = None
    best_value = -math.inf
    curve: list[float] = []
    used = 0
    for i, cell in enumerate(cells):
        run = hoo_maximize(delta, cell.box, budgets[i], noise=noise,
                           c=cell.c, beta=cell.beta, exploration=exploration)
        used += run.queries_used
        for v in run.regret_curve:
            best_value = max(best_value, v)
            curve.append(best_value)
        if run.best_value >= best_value:
            best_point = run.best_point
    return OptRun(used, best_point, best_value, curve)


# ---------------------------------------------------------------------------
# Partitions and oracles from white-box models
# ---------------------------------------------------------------------------

def _model_pieces(space: FeatureSpace, model: Model) -> list[PartitionCell]:
    """A model's own partition with per-cell smoothness."""
    if isinstance(model, DecisionTree):
        return [PartitionCell(l.region, 0.0, 1.0) for l in model.leaves
                if not l.region.is_empty()]
    if isinstance(model, AdditiveModel):
        if model.link != "identity":
            raise UnsupportedPair(
                "partition extraction needs an identity-link additive model")
        if all(isinstance(t, LinearTerm) for t in model.terms.values()):
            c = sum(abs(t.weight) for t in model.terms.values())
            return [PartitionCell(full_box(space), c, 1.0)]
        raise UnsupportedPair(
            "partition extraction supports trees and linear additive models")
    if isinstance(model, TreeEnsemble):
        if model.post_link != "identity":
            raise UnsupportedPair("partition extraction needs identity post link")
        cells = [PartitionCell(l.region, 0.0, 1.0)
                 for l in model.trees[0].leaves if not l.region.is_empty()]
        for tree in model.trees[1:]:
            nxt = []
            for cell in cells:
                for leaf in tree.leaves:
                    inter = box_intersect(cell.box, leaf.region)
                    if inter is not None:
                        nxt.append(PartitionCell(inter, 0.0, 1.0))
            cells = nxt
        return cells
    raise UnsupportedPair(
        f"no partition extraction for {type(model).__name__}")


def partition_from_models(space: FeatureSpace, f: Model,
                          f0: Model) -> PartitionSpec:
    """Overlay the two models' partitions; cells carry combined smoothness."""
    cells = []
    for a in _model_pieces(space, f):
        for b in _model_pieces(space, f0):
            inter = box_intersect(a.box, b.box)
            if inter is None:
                continue
            c, beta = combine_lipschitz(a.c, a.beta, b.c, b.beta)
            cells.append(PartitionCell(inter, c, beta))
    if not cells:
        raise EmptyRegion("model partitions do not overlap")
    return PartitionSpec(tuple(cells))


def difference_oracle(f: Model, f0: Model) -> Oracle:
    """In-process oracle for f(x) - f0(x) on the score scale."""

    def delta(point: Point) -> float:
        return predict(f, point).value - predict(f0, point).value

    return delta
