"""Domain vocabulary: feature spaces, boxes, certification sets, deviation functions.

Continuous coordinates are handled in two frames. The *raw* frame is whatever
units the data comes in; the *normalized* frame is standardized,
z = (x - mean) / std. All geometry and all certifiers work in the normalized
frame; conversion happens at the io boundary. Categorical values stay as
category labels in both frames, with the one-hot encoding implied: changing a
category flips two one-hot coordinates, so two distinct categories are at
l-inf distance exactly 1 in the encoded space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

from .errors import AbstainUnconfigured, SchemaMismatch


# ---------------------------------------------------------------------------
# Feature spaces
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuousFeature:
    name: str
    lo: float
    hi: float
    mean: float = 0.0
    std: float = 1.0

    def __post_init__(self):
        if not self.lo <= self.hi:
            raise SchemaMismatch(f"feature {self.name!r}: lo > hi")
        if not self.std > 0:
            raise SchemaMismatch(f"feature {self.name!r}: std must be positive")

    def normalize(self, x: float) -> float:
        return (x - self.mean) / self.std

    def denormalize(self, z: float) -> float:
        return self.mean + self.std * z


@dataclass(frozen=True)
class CategoricalFeature:
    name: str
    categories: tuple[str, ...]

    def __post_init__(self):
        if not self.categories:
            raise SchemaMismatch(f"feature {self.name!r}: empty category list")
        if len(set(self.categories)) != len(self.categories):
            raise SchemaMismatch(f"feature {self.name!r}: duplicate categories")


FeatureSpec = Union[ContinuousFeature, CategoricalFeature]


@dataclass(frozen=True)
class FeatureSpace:
    """Ordered schema of d features."""

    features: tuple[FeatureSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate feature names")

    @property
    def dim(self) -> int:
        return len(self.features)

    def index_of(self, name: str) -> int:
        for i, f in enumerate(self.features):
            if f.name == name:
                return i
        raise SchemaMismatch(f"unknown feature {name!r}")

    def continuous_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features)
                if isinstance(f, ContinuousFeature)]

    def categorical_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.features)
                if isinstance(f, CategoricalFeature)]

    def encoded_dim(self) -> int:
        """Length of the one-hot encoded vector."""
        n = 0
        for f in self.features:
            n += 1 if isinstance(f, ContinuousFeature) else len(f.categories)
        return n


# A point in the normalized frame: standardized floats for continuous
# features, category labels for categorical ones.
Point = tuple

PINF = float("inf")
NINF = float("-inf")


# ---------------------------------------------------------------------------
# Boxes (axis-aligned Cartesian regions)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Interval:
    """Closed interval [lo, hi]; empty iff lo > hi."""

    lo: float
    hi: float

    def is_empty(self) -> bool:
        return self.lo > self.hi

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def intersect(self, other: Interval) -> Interval:
        return Interval(max(self.lo, other.lo), min(self.hi, other.hi))


@dataclass(frozen=True)
class CategorySet:
    members: frozenset[str]

    def is_empty(self) -> bool:
        return not self.members

    def contains(self, c: str) -> bool:
        return c in self.members

    def intersect(self, other: CategorySet) -> CategorySet:
        return CategorySet(self.members & other.members)


BoxComponent = Union[Interval, CategorySet]


@dataclass(frozen=True)
class Box:
    """Cartesian product of one component per feature, in space order."""

    components: tuple[BoxComponent, ...]

    def is_empty(self) -> bool:
        return any(c.is_empty() for c in self.components)

    def contains(self, point: Point) -> bool:
        return all(c.contains(v) for c, v in zip(self.components, point))

    def __len__(self) -> int:
        return len(self.components)


def full_box(space: FeatureSpace) -> Box:
    """The whole feature space as a box, in normalized coordinates."""
    comps: list[BoxComponent] = []
    for f in space.features:
        if isinstance(f, ContinuousFeature):
            comps.append(Interval(f.normalize(f.lo), f.normalize(f.hi)))
        else:
            comps.append(CategorySet(frozenset(f.categories)))
    return Box(tuple(comps))


def check_box(space: FeatureSpace, box: Box) -> None:
    if len(box.components) != space.dim:
        raise SchemaMismatch(
            f"box has {len(box.components)} components, space has {space.dim}")
    for f, c in zip(space.features, box.components):
        if isinstance(f, ContinuousFeature) != isinstance(c, Interval):
            raise SchemaMismatch(f"component kind mismatch on feature {f.name!r}")


# ---------------------------------------------------------------------------
# Certification sets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FullSpace:
    pass


@dataclass(frozen=True)
class FiniteSet:
    points: tuple[Point, ...]


@dataclass(frozen=True)
class BallUnion:
    """Union of l-p balls around centers, radius in normalized units."""

    centers: tuple[Point, ...]
    radius: float
    norm: float = PINF

    def __post_init__(self):
        if self.radius < 0:
            raise SchemaMismatch("ball radius must be >= 0")
        if self.norm not in (1, 2, PINF):
            raise SchemaMismatch("norm must be 1, 2 or inf")


CertificationSet = Union[FullSpace, FiniteSet, BallUnion]


def check_certset(space: FeatureSpace, certset: CertificationSet) -> None:
    """Validate that every center/point fits the space and lies in bounds."""
    pts: Sequence[Point] = ()
    if isinstance(certset, FiniteSet):
        pts = certset.points
    elif isinstance(certset, BallUnion):
        pts = certset.centers
    bounds = full_box(space)
    for p in pts:
        if len(p) != space.dim:
            raise SchemaMismatch("point arity does not match the space")
        if not bounds.contains(p):
            raise SchemaMismatch(f"point {p!r} outside feature space bounds")


# ---------------------------------------------------------------------------
# Predictions and deviation functions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Score:
    value: float

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise SchemaMismatch("score must be finite")


@dataclass(frozen=True)
class Abstain:
    pass


Prediction = Union[Score, Abstain]

ABSTAIN = Abstain()


@dataclass(frozen=True)
class DeviationFn:
    """Non-negative measure of disagreement between two scalar scores.

    The structural flags mirror what certifiers require: `satisfies_monotone`
    means D(y, y0) = 0 at y = y0 and is non-decreasing as y moves away from y0
    in either direction; `satisfies_difference` means D depends only on
    y - y0. `abstain_value` is the deviation charged when either model
    abstains; it must sit strictly between 0 and the declared maximum.
    """

    kind: str  # "abs" | "pow" | "custom"
    power: float = 1.0
    fn: Callable[[float, float], float] | None = field(default=None, compare=False)
    satisfies_monotone: bool = True
    satisfies_difference: bool = True
    symmetric: bool = True
    abstain_value: float | None = None
    max_value: float | None = None

    def __post_init__(self):
        if self.kind == "pow" and not self.power > 0:
            raise SchemaMismatch("power must be > 0")
        if self.kind == "custom" and self.fn is None:
            raise SchemaMismatch("custom deviation needs an evaluator")
        if self.abstain_value is not None:
            if self.abstain_value <= 0:
                raise SchemaMismatch("abstain value must be > 0")
            if self.max_value is not None and self.abstain_value >= self.max_value:
                raise SchemaMismatch("abstain value must be below the maximum of D")

    @staticmethod
    def abs_diff(abstain_value: float | None = None,
                 max_value: float | None = None) -> DeviationFn:
        return DeviationFn(kind="abs", abstain_value=abstain_value,
                           max_value=max_value)

    @staticmethod
    def power_diff(p: float, abstain_value: float | None = None,
                   max_value: float | None = None) -> DeviationFn:
        return DeviationFn(kind="pow", power=p, abstain_value=abstain_value,
                           max_value=max_value)

    @staticmethod
    def custom(fn: Callable[[float, float], float], *,
               satisfies_monotone: bool = False,
               satisfies_difference: bool = False,
               symmetric: bool = False,
               abstain_value: float | None = None,
               max_value: float | None = None) -> DeviationFn:
        return DeviationFn(kind="custom", fn=fn,
                           satisfies_monotone=satisfies_monotone,
                           satisfies_difference=satisfies_difference,
                           symmetric=symmetric,
                           abstain_value=abstain_value,
                           max_value=max_value)

    def value(self, y: float, y0: float) -> float:
        if self.kind == "abs":
            return abs(y - y0)
        if self.kind == "pow":
            return abs(y - y0) ** self.power
        return self.fn(y, y0)

    def of_difference(self, t: float) -> float:
        """D as a function of y - y0; requires the difference flag."""
        if not self.satisfies_difference:
            raise SchemaMismatch("deviation is not a function of the difference")
        if self.kind == "abs":
            return abs(t)
        if self.kind == "pow":
            return abs(t) ** self.power
        return self.fn(t, 0.0)


def deviation(D: DeviationFn, a: Prediction, b: Prediction) -> float:
    """Deviation between two predictions, honoring abstention."""
    if isinstance(a, Abstain) or isinstance(b, Abstain):
        if D.abstain_value is None:
            raise AbstainUnconfigured("abstaining prediction with no abstain value")
        return D.abstain_value
    return D.value(a.value, b.value)


def separable_deviation(ds: Sequence[DeviationFn],
                        ys: Sequence[Prediction],
                        y0s: Sequence[Prediction]) -> float:
    """Sum of per-output deviations for multi-output scores."""
    if not (len(ds) == len(ys) == len(y0s)):
        raise SchemaMismatch("multi-output arity mismatch")
    return sum(deviation(d, a, b) for d, a, b in zip(ds, ys, y0s))


# ---------------------------------------------------------------------------
# Point normalization
# ---------------------------------------------------------------------------

def standardize_point(space: FeatureSpace, raw: Sequence) -> Point:
    """Raw point -> normalized frame (labels kept for categoricals)."""
    if len(raw) != space.dim:
        raise SchemaMismatch("point arity does not match the space")
    out = []
    for f, v in zip(space.features, raw):
        if isinstance(f, ContinuousFeature):
            out.append(f.normalize(float(v)))
        else:
            if v not in f.categories:
                raise SchemaMismatch(f"unknown category {v!r} for {f.name!r}")
            out.append(v)
    return tuple(out)


def destandardize_point(space: FeatureSpace, point: Point) -> tuple:
    out = []
    for f, v in zip(space.features, point):
        if isinstance(f, ContinuousFeature):
            out.append(f.denormalize(float(v)))
        else:
            out.append(v)
    return tuple(out)


def normalize_point(space: FeatureSpace, raw: Sequence) -> np.ndarray:
    """Raw point -> flat numeric vector: standardized floats, one-hot blocks."""
    if len(raw) != space.dim:
        raise SchemaMismatch("point arity does not match the space")
    out = np.zeros(space.encoded_dim())
    k = 0
    for f, v in zip(space.features, raw):
        if isinstance(f, ContinuousFeature):
            out[k] = f.normalize(float(v))
            k += 1
        else:
            if v not in f.categories:
                raise SchemaMismatch(f"unknown category {v!r} for {f.name!r}")
            out[k + f.categories.index(v)] = 1.0
            k += len(f.categories)
    return out


def denormalize_point(space: FeatureSpace, vec: np.ndarray) -> tuple:
    """Inverse of normalize_point."""
    if len(vec) != space.encoded_dim():
        raise SchemaMismatch("encoded vector has wrong length")
    out = []
    k = 0
    for f in space.features:
        if isinstance(f, ContinuousFeature):
            out.append(f.denormalize(float(vec[k])))
            k += 1
        else:
            block = vec[k:k + len(f.categories)]
            hot = np.flatnonzero(np.asarray(block) == 1.0)
            if len(hot) != 1:
                raise SchemaMismatch(f"bad one-hot block for {f.name!r}")
            out.append(f.categories[int(hot[0])])
            k += len(f.categories)
    return tuple(out)
