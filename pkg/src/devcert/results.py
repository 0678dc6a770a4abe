"""Result containers shared by all certifiers."""

from __future__ import annotations

from dataclasses import dataclass, field

from .types import Box, BoxComponent


@dataclass(frozen=True)
class Maximizer:
    """One argmax region: where the reported deviation is attained."""

    box: Box  # normalized frame; io denormalizes for reports
    value: float
    witness_ball_ids: frozenset[int] = frozenset()
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class LeafBreakdown:
    """Per-reference-leaf summary of the deviation search."""

    leaf_index: int
    reference_value: float
    deviation: float
    maximizer: Box | None = None
    model_min: float | None = None
    model_max: float | None = None
    leaf_box: Box | None = None


@dataclass(frozen=True)
class FeatureContribution:
    feature: int
    contribution: float
    extremizer: BoxComponent


@dataclass(frozen=True)
class BoundsStep:
    """One point of the anytime primal/dual trace."""

    step: int
    lower: float
    upper: float


@dataclass
class CertResult:
    """Lower/upper deviation bounds plus everything reports need.

    `exact` implies lower == upper. For anytime searches that hit a budget,
    `exact` is False and `trace` records the bound evolution.
    """

    lower: float
    upper: float
    exact: bool
    maximizers: list[Maximizer] = field(default_factory=list)
    per_reference_leaf: list[LeafBreakdown] = field(default_factory=list)
    contributions: list[FeatureContribution] = field(default_factory=list)
    stats: dict = field(default_factory=dict)
    trace: list[BoundsStep] = field(default_factory=list)

    def __post_init__(self):
        if self.lower > self.upper + 1e-12:
            raise ValueError("lower bound above upper bound")
