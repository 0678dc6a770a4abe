import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from devcert import (
    ABSTAIN,
    AbstainUnconfigured,
    CategoricalFeature,
    ContinuousFeature,
    DeviationFn,
    FeatureSpace,
    Score,
    SchemaMismatch,
    denormalize_point,
    deviation,
    normalize_point,
)
from devcert.types import separable_deviation

from conftest import make_space, random_point

scores = st.floats(min_value=-10, max_value=10, allow_nan=False)


def test_abs_diff_examples():
    D = DeviationFn.abs_diff()
    assert deviation(D, Score(0.7), Score(0.3)) == pytest.approx(0.4)
    assert deviation(D, Score(0.5), Score(0.5)) == 0.0


def test_abstain_value_used():
    D = DeviationFn.abs_diff(abstain_value=0.25, max_value=1.0)
    assert deviation(D, ABSTAIN, Score(0.9)) == 0.25
    assert deviation(D, Score(0.9), ABSTAIN) == 0.25


def test_abstain_unconfigured_raises():
    with pytest.raises(AbstainUnconfigured):
        deviation(DeviationFn.abs_diff(), ABSTAIN, Score(0.1))


def test_abstain_value_contract():
    with pytest.raises(SchemaMismatch):
        DeviationFn.abs_diff(abstain_value=1.5, max_value=1.0)
    with pytest.raises(SchemaMismatch):
        DeviationFn.abs_diff(abstain_value=0.0)


@given(scores, scores)
def test_symmetry(a, b):
    D = DeviationFn.abs_diff()
    assert deviation(D, Score(a), Score(b)) == deviation(D, Score(b), Score(a))


@given(scores)
def test_identity_zero(a):
    for D in (DeviationFn.abs_diff(), DeviationFn.power_diff(2.0)):
        assert deviation(D, Score(a), Score(a)) == 0.0


@given(scores, scores, scores, st.floats(min_value=0.25, max_value=4))
def test_power_diff_monotone_in_gap(y0, a, b, p):
    D = DeviationFn.power_diff(p)
    lo, hi = sorted((abs(a - y0), abs(b - y0)))
    d_lo = D.value(y0 + lo, y0)
    d_hi = D.value(y0 + hi, y0)
    assert d_lo <= d_hi + 1e-12


def test_separable_deviation():
    ds = [DeviationFn.abs_diff(), DeviationFn.power_diff(2.0)]
    got = separable_deviation(ds, [Score(1.0), Score(2.0)],
                              [Score(0.0), Score(0.0)])
    assert got == pytest.approx(1.0 + 4.0)


def test_normalize_examples():
    space = FeatureSpace((ContinuousFeature("a", 0, 20, mean=10, std=2),))
    assert normalize_point(space, (14,))[0] == pytest.approx(2.0)
    space = FeatureSpace((ContinuousFeature("a", -5, 5, mean=0, std=1),))
    assert normalize_point(space, (0,))[0] == 0.0


def test_one_hot_encoding():
    space = FeatureSpace((CategoricalFeature("c", ("a", "b", "c")),))
    np.testing.assert_array_equal(normalize_point(space, ("b",)),
                                  [0.0, 1.0, 0.0])


def test_unknown_category_rejected():
    space = FeatureSpace((CategoricalFeature("c", ("a", "b")),))
    with pytest.raises(SchemaMismatch):
        normalize_point(space, ("zz",))


def test_normalize_round_trip():
    rng = random.Random(7)
    space = make_space(3, (3, 4), lo=-50.0, hi=80.0)
    feats = list(space.features)
    feats[0] = ContinuousFeature("x0", -50, 80, mean=11.3, std=4.7)
    feats[1] = ContinuousFeature("x1", -50, 80, mean=-2.0, std=0.25)
    space = FeatureSpace(tuple(feats))
    for _ in range(200):
        raw = random_point(space, rng)
        back = denormalize_point(space, normalize_point(space, raw))
        for a, b in zip(raw, back):
            if isinstance(a, str):
                assert a == b
            else:
                assert abs(a - b) < 1e-12 * max(1.0, abs(a))


def test_space_invariants():
    with pytest.raises(SchemaMismatch):
        ContinuousFeature("x", 1.0, 0.0)
    with pytest.raises(SchemaMismatch):
        ContinuousFeature("x", 0.0, 1.0, std=0.0)
    with pytest.raises(SchemaMismatch):
        CategoricalFeature("c", ())
    with pytest.raises(SchemaMismatch):
        CategoricalFeature("c", ("a", "a"))
    with pytest.raises(SchemaMismatch):
        FeatureSpace((ContinuousFeature("x", 0, 1),
                      ContinuousFeature("x", 0, 1)))
