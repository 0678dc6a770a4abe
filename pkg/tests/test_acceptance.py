"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test finishes by printing one PASS line (visible with `pytest -s` or
in the captured output); a failing criterion fails its test.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import random
import statistics
import subprocess
import sys
import time

import numpy as np
import pytest

from devcert import (
    AdditiveModel,
    BallUnion,
    CategoricalFeature,
    DeviationFn,
    FiniteSet,
    FullSpace,
    Interval,
    LinearTerm,
    PiecewiseConstantTerm,
    PartitionCell,
    PartitionSpec,
    build_leaf_graph,
    certify_additive_vs_additive,
    certify_additive_vs_constant,
    certify_additive_vs_tree,
    certify_ensemble_vs_tree,
    certify_tree_tree,
    combine_lipschitz,
    difference_oracle,
    full_box,
    hoo_maximize,
    partition_from_models,
    partitioned_maximize,
    robust_loss_additive,
)
from devcert.certify_ensemble import enumerate_cliques
from devcert.geometry import clip_box_to_ball

from conftest import (
    make_space,
    random_ensemble,
    random_gam,
    random_monotone_deviation,
    random_points,
    random_tree,
)
from test_certify_ensemble import exhaustive_oracle as ensemble_oracle

ABS = DeviationFn.abs_diff()
FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def fx(name):
    return os.path.join(FIXTURES, name)


def _ok(msg):
    print(f"ACCEPTANCE PASS: {msg}")


# ---------------------------------------------------------------------------
# Vectorized oracles
# ---------------------------------------------------------------------------

def _mesh(space, axes):
    """Flat coordinate arrays (continuous floats / category indices)."""
    grids = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes],
                        indexing="ij")
    return [g.ravel() for g in grids]


def _tree_values_on_grid(space, tree, coords):
    n = coords[0].size
    values = np.empty(n)
    assigned = np.zeros(n, dtype=bool)
    for leaf in tree.leaves:
        mask = ~assigned
        for j, comp in enumerate(leaf.region.components):
            if isinstance(comp, Interval):
                mask &= (coords[j] >= comp.lo) & (coords[j] <= comp.hi)
            else:
                f = space.features[j]
                allowed = np.array([c in comp.members for c in f.categories])
                mask &= allowed[coords[j].astype(int)]
            if not mask.any():
                break
        values[mask] = leaf.value
        assigned |= mask
    assert assigned.all(), "grid point not covered by the tree"
    return values


def _grid_axes(space, trees, certset):
    axes = []
    for j, f in enumerate(space.features):
        if isinstance(f, CategoricalFeature):
            axes.append(list(range(len(f.categories))))
            continue
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
        axes.append([0.5 * (a + b) for a, b in zip(cuts, cuts[1:]) if b > a])
    return axes


def _certset_mask(space, coords, certset):
    n = coords[0].size
    if isinstance(certset, FullSpace):
        return np.ones(n, dtype=bool)
    member = np.zeros(n, dtype=bool)
    for c in certset.centers:
        m = np.ones(n, dtype=bool)
        for j, f in enumerate(space.features):
            if isinstance(f, CategoricalFeature):
                if certset.radius < 1.0:
                    m &= coords[j].astype(int) == f.categories.index(c[j])
            else:
                m &= np.abs(coords[j] - c[j]) <= certset.radius
        member |= m
    return member


def grid_oracle_tree_pair(space, f, f0, D, certset):
    trees = list(getattr(f, "trees", [f])) + [f0]
    axes = _grid_axes(space, trees, certset)
    coords = _mesh(space, axes)
    mask = _certset_mask(space, coords, certset)
    if not mask.any():
        return None
    if hasattr(f, "trees"):
        per_tree = [_tree_values_on_grid(space, t, coords) for t in f.trees]
        stack = np.sum(per_tree, axis=0)
        if f.aggregation == "mean":
            stack = stack / len(f.trees)
        stack = stack + f.intercept
        y = stack
    else:
        y = _tree_values_on_grid(space, f, coords)
    y0 = _tree_values_on_grid(space, f0, coords)
    dev = np.abs(y - y0) if D.kind == "abs" else D.fn(y, y0)
    return float(dev[mask].max())


def _additive_axes(space, models, region):
    """Representative points per feature: plateau midpoints and endpoints."""
    axes = []
    for j, comp in enumerate(region.components):
        f = space.features[j]
        if isinstance(f, CategoricalFeature):
            axes.append(sorted(comp.members))
            continue
        pts = {comp.lo, comp.hi}
        for m in models:
            term = m.terms.get(j)
            if isinstance(term, PiecewiseConstantTerm):
                edges = [comp.lo] + [b for b in term.breakpoints
                                     if comp.lo < b < comp.hi] + [comp.hi]
                pts.update(0.5 * (a + b) for a, b in zip(edges, edges[1:]))
                pts.update(edges)
        axes.append(sorted(pts))
    return axes


def _additive_scores_on_grid(space, model, axes):
    """Link-scale scores over the product grid as an ndarray."""
    shape = tuple(len(a) for a in axes)
    total = np.full(shape, model.intercept)
    for j, pts in enumerate(axes):
        term = model.terms.get(j)
        if term is None:
            continue
        if isinstance(term, LinearTerm):
            vals = np.array([term.weight * v for v in pts])
        elif isinstance(term, PiecewiseConstantTerm):
            vals = np.array([term.value_at(v) for v in pts])
        else:
            vals = np.array([term.value_at(v) for v in pts])
        view = [1] * len(shape)
        view[j] = len(pts)
        total = total + vals.reshape(view)
    return total


def additive_vs_tree_oracle(space, f, f0, D, certset):
    best = -math.inf
    for leaf in f0.leaves:
        if isinstance(certset, FullSpace):
            regions = [leaf.region]
        elif isinstance(certset, FiniteSet):
            regions = [clip_box_to_ball(leaf.region, p, 0.0)
                       for p in certset.points]
        else:
            regions = [clip_box_to_ball(leaf.region, c, certset.radius)
                       for c in certset.centers]
        for region in regions:
            if region is None:
                continue
            axes = _additive_axes(space, [f], region)
            scores = _additive_scores_on_grid(space, f, axes)
            y = _apply_link(f.link, scores)
            best = max(best, float(np.max(D.fn(y, leaf.value)
                                          if D.kind == "custom"
                                          else np.abs(y - leaf.value))))
    return best


def _apply_link(link, z):
    if link == "identity":
        return z
    if link == "logit":
        return 1.0 / (1.0 + np.exp(-z))
    return np.exp(z)


def additive_pair_oracle(space, f, f0, certset):
    if isinstance(certset, FullSpace):
        regions = [full_box(space)]
    else:
        regions = [clip_box_to_ball(full_box(space), c, certset.radius)
                   for c in certset.centers]
    best = -math.inf
    for region in regions:
        if region is None:
            continue
        axes = _additive_axes(space, [f, f0], region)
        d = (_additive_scores_on_grid(space, f, axes)
             - _additive_scores_on_grid(space, f0, axes))
        best = max(best, float(np.max(np.abs(d))))
    return best


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------

def test_tree_pair_exactness_200_instances():
    t0 = time.time()
    rng = random.Random(42)
    for trial in range(200):
        d = rng.randint(1, 3)
        space = make_space(d, (3,) if trial % 4 == 0 else ())
        f = random_tree(space, rng.randint(2, 16), rng)
        f0 = random_tree(space, rng.randint(2, 16), rng)
        if trial % 2 == 0:
            certset = FullSpace()
        else:
            certset = BallUnion(random_points(space, 3, rng),
                                rng.choice([0.2, 0.6, 1.3]))
        res = certify_tree_tree(space, f, f0, ABS, certset)
        want = grid_oracle_tree_pair(space, f, f0, ABS, certset)
        assert want is not None
        assert abs(res.lower - want) <= 1e-12, (trial, res.lower, want)
        assert res.exact and res.upper == res.lower
    took = time.time() - t0
    assert took < 30.0, f"tree-pair exactness took {took:.1f}s"
    _ok(f"tree x tree exact on 200 instances vs dense grid ({took:.1f}s)")


def test_prop1_scale_thousand_leaves_under_1s():
    rng = random.Random(7)
    space = make_space(3)
    f = random_tree(space, 1000, rng)
    f0 = random_tree(space, 1000, rng)
    t0 = time.perf_counter()
    res = certify_tree_tree(space, f, f0, ABS, FullSpace())
    took = time.perf_counter() - t0
    assert res.exact
    assert res.stats["pairs_screened"] <= 10 ** 6
    assert took < 1.0, f"1000x1000 certification took {took:.3f}s"
    _ok(f"L=L0=1000 exact in {took * 1000:.0f}ms with "
        f"{res.stats['pairs_screened']} pair evaluations")


def test_additive_certifiers_200_instances():
    t0 = time.time()
    rng = random.Random(11)
    for trial in range(100):  # GAM vs tree
        d = rng.randint(1, 4)
        space = make_space(d, (3,) if trial % 3 == 0 else ())
        f = random_gam(space, rng, max_bins=8,
                       link=rng.choice(["identity", "logit"]))
        f0 = random_tree(space, rng.randint(2, 8), rng)
        certset = [FullSpace(),
                   BallUnion(random_points(space, 5, rng),
                             rng.choice([0.2, 0.8, 1.5])),
                   FiniteSet(random_points(space, 5, rng))][trial % 3]
        res = certify_additive_vs_tree(space, f, f0, ABS, certset)
        want = additive_vs_tree_oracle(space, f, f0, ABS, certset)
        assert abs(res.lower - want) <= 1e-9, (trial, res.lower, want)
    for trial in range(100):  # GAM vs GAM, identity links
        d = rng.randint(1, 4)
        space = make_space(d, (3,) if trial % 3 == 0 else ())
        f = random_gam(space, rng, max_bins=8, allow_linear=False)
        f0 = random_gam(space, rng, max_bins=8, allow_linear=False)
        certset = [FullSpace(),
                   BallUnion(random_points(space, 5, rng),
                             rng.choice([0.3, 1.2]))][trial % 2]
        res = certify_additive_vs_additive(space, f, f0, ABS, certset)
        want = additive_pair_oracle(space, f, f0, certset)
        assert abs(res.lower - want) <= 1e-9, (trial, res.lower, want)
    took = time.time() - t0
    assert took < 60.0, f"additive acceptance took {took:.1f}s"
    _ok(f"additive certifiers exact on 200 instances ({took:.1f}s)")


def _ensemble_instances(n, seed):
    rng = random.Random(seed)
    out = []
    for trial in range(n):
        d = rng.randint(1, 3)
        space = make_space(d, (3,) if trial % 5 == 0 else ())
        ens = random_ensemble(space, rng.randint(1, 4), rng.randint(2, 5), rng)
        f0 = random_tree(space, rng.randint(2, 5), rng)
        certset = [FullSpace(),
                   BallUnion(random_points(space, 4, rng),
                             rng.choice([0.3, 0.9, 1.4])),
                   FiniteSet(random_points(space, 4, rng))][trial % 3]
        out.append((space, ens, f0, certset))
    return out


def test_ensemble_exactness_100_instances():
    from devcert import EmptyCertSet

    checked = 0
    for space, ens, f0, certset in _ensemble_instances(100, 23):
        want, count = ensemble_oracle(space, ens, f0, ABS, certset)
        if count == 0:
            with pytest.raises(EmptyCertSet):
                certify_ensemble_vs_tree(space, ens, f0, ABS, certset)
            continue
        res = certify_ensemble_vs_tree(space, ens, f0, ABS, certset)
        assert res.exact
        assert abs(res.lower - want) <= 1e-9, (res.lower, want)
        checked += 1
    assert checked >= 90
    _ok(f"ensemble certifier exact on {checked} run-to-completion instances "
        f"({100 - checked} degenerate instances raised EmptyCertSet)")


def test_ensemble_anytime_soundness():
    violations = 0
    steps = 0
    for space, ens, f0, certset in _ensemble_instances(100, 23):
        want, count = ensemble_oracle(space, ens, f0, ABS, certset)
        if count == 0:
            continue
        res = certify_ensemble_vs_tree(space, ens, f0, ABS, certset)
        prev_lb, prev_ub = -math.inf, math.inf
        for step in res.trace:
            steps += 1
            if step.lower > want + 1e-9 or step.upper < want - 1e-9:
                violations += 1
            if step.lower < prev_lb - 1e-12 or step.upper > prev_ub + 1e-12:
                violations += 1
            prev_lb, prev_ub = step.lower, step.upper
    assert steps > 0
    assert violations == 0
    _ok(f"anytime sandwich held at all {steps} recorded steps "
        "(lb nondecreasing, dual nonincreasing)")


def test_pruning_effectiveness_median_under_20_percent():
    ratios = []
    for seed in range(20):
        rng = random.Random(1000 + seed)
        space = make_space(2)
        ens = random_ensemble(space, 6, 10, rng)
        f0 = random_tree(space, 10, rng)
        g = build_leaf_graph(space, ens, f0, FullSpace())
        exhaustive = sum(1 for _ in enumerate_cliques(g))
        res = certify_ensemble_vs_tree(space, ens, f0, ABS, FullSpace())
        assert res.exact
        ratios.append(res.stats["cliques_completed"] / exhaustive)
    med = statistics.median(ratios)
    assert med < 0.20, f"median pruning ratio {med:.3f}"
    _ok(f"pruning: median cliques completed = {med * 100:.1f}% of "
        "exhaustive over 20 forests (K=6, L_k=10)")


def test_monotone_radius_sweep_on_fixtures():
    from devcert.dataset import load_points
    from devcert.dispatch import certify_pair
    from devcert.modelfile import load_model

    pairs = [
        ("stump.json", "constant.json", None),
        ("gam.json", "tree_ref.json", "centers.csv"),
        ("glm_a.json", "glm_b.json", "glm_centers.csv"),
        ("forest.json", "tree_ref.json", "centers.csv"),
        ("rulelist.json", "tree_ref.json", "centers.csv"),
        ("ruleensemble.json", "tree_ref.json", "centers.csv"),
    ]
    radii = [0.0, 0.1, 0.2, 0.5, 1.0, math.inf]
    for model, reference, centers_csv in pairs:
        mf = load_model(fx(model))
        mf0 = load_model(fx(reference))
        if centers_csv is None:
            centers = ((0.2,), (0.7,))
        else:
            centers = tuple(load_points(fx(centers_csv), mf.space).points)
        values = []
        for r in radii:
            if r == 0.0:
                certset = FiniteSet(centers)
            elif math.isinf(r):
                certset = FullSpace()
            else:
                certset = BallUnion(centers, r)
            values.append(certify_pair(mf, mf0, ABS, certset).lower)
        for a, b in zip(values, values[1:]):
            assert a <= b + 1e-12, (model, values)
        assert all(values[0] <= v + 1e-12 for v in values[1:])
    _ok("max deviation nondecreasing over r in {0,0.1,0.2,0.5,1,inf} "
        "for all 6 fixture pairs; finite-set value is the floor")


def test_prop2_random_monotone_deviations():
    rng = random.Random(5)
    for trial in range(100):
        d = rng.randint(1, 3)
        space = make_space(d, (3,) if trial % 4 == 0 else ())
        link = rng.choice(["identity", "logit"])
        f = random_gam(space, rng, max_bins=6, link=link)
        D = random_monotone_deviation(rng)
        y0 = rng.uniform(0, 1)
        res = certify_additive_vs_constant(space, f, y0, D, full_box(space))
        axes = _additive_axes(space, [f], full_box(space))
        scores = _additive_scores_on_grid(space, f, axes)
        want = float(np.max(D.fn(_apply_link(link, scores), y0)))
        assert abs(res.lower - want) <= 1e-9, (trial, res.lower, want)
    _ok("two-sided extremization equals grid max of D(f(x), y0) for "
        "100 random monotone deviations")


def test_prop3_holder_difference_bound():
    rng = np.random.default_rng(9)
    violations = 0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        c0, c1 = rng.uniform(0.1, 3.0, size=2)
        b0, b1 = rng.uniform(0.25, 1.0, size=2)
        z0 = rng.random(d)
        z1 = rng.random(d)
        c, beta = combine_lipschitz(c0, b0, c1, b1)
        X = rng.random((100_000, d))
        Y = rng.random((100_000, d))

        def h(pts, cc, bb, z):
            return cc * np.max(np.abs(pts - z), axis=1) ** bb

        gap = np.abs((h(X, c0, b0, z0) - h(X, c1, b1, z1))
                     - (h(Y, c0, b0, z0) - h(Y, c1, b1, z1)))
        dist = np.max(np.abs(X - Y), axis=1)
        violations += int(np.sum(gap > c * dist ** beta + 1e-9))
    assert violations == 0
    _ok("difference of 50 Hoelder pairs met the (2 max c, min beta) bound "
        "on 10^5 sampled point pairs each")


def test_blackbox_regimes():
    # regime: piecewise-constant differences are solved with q = pi queries
    rng = random.Random(3)
    for _ in range(10):
        space = make_space(2)
        f = random_tree(space, rng.randint(3, 6), rng)
        f0 = random_tree(space, rng.randint(3, 6), rng)
        partition = partition_from_models(space, f, f0)
        delta = difference_oracle(f, f0)
        run = partitioned_maximize(delta, partition, partition.size)
        assert run.queries_used == partition.size
        want = grid_oracle_tree_pair(space, f, f0, ABS, FullSpace())
        # signed max vs abs max: recompute signed truth on the same grid
        axes = _grid_axes(space, [f, f0], FullSpace())
        coords = _mesh(space, axes)
        signed = (_tree_values_on_grid(space, f, coords)
                  - _tree_values_on_grid(space, f0, coords))
        assert run.best_value == pytest.approx(float(signed.max()), abs=1e-12)

    # regime: partition-aware budget splitting is no worse in the median.
    # The flat baseline runs blind (default exploration constant): the
    # difference jumps at cell boundaries, so no global smoothness constant
    # exists for it; knowing the cells and their constants is exactly the
    # information the partition-aware mode has.
    gains = []
    for seed in range(20):
        rng = random.Random(100 + seed)
        space = make_space(2, lo=0.0, hi=1.0)
        tree = random_tree(space, 4, rng)
        params = []
        cells = []
        for leaf in tree.leaves:
            w = (rng.uniform(-2, 2), rng.uniform(-2, 2))
            b = rng.uniform(-1, 1)
            params.append((leaf.region, w, b))
            cells.append(PartitionCell(leaf.region, abs(w[0]) + abs(w[1]), 1.0))

        def delta(p, params=params):
            for region, w, b in params:
                if region.contains(p):
                    return w[0] * p[0] + w[1] * p[1] + b
            raise AssertionError("uncovered point")

        opt = max(w[0] * x + w[1] * y + b
                  for region, w, b in params
                  for x in (region.components[0].lo, region.components[0].hi)
                  for y in (region.components[1].lo, region.components[1].hi))
        budget = 60
        part = partitioned_maximize(delta, PartitionSpec(tuple(cells)), budget)
        flat = hoo_maximize(delta, full_box(space), budget)
        gains.append((opt - part.best_value) - (opt - flat.best_value))
    assert statistics.median(gains) <= 1e-12
    _ok("piecewise-constant differences solved with q = pi queries; "
        "partitioned regret <= flat regret in the median over 20 seeds")


def test_robust_accuracy_corner_enumeration():
    rng = random.Random(17)
    for trial in range(50):
        d = rng.randint(1, 10)
        space = make_space(d, lo=-5.0, hi=5.0)
        w = [rng.uniform(-1, 1) for _ in range(d)]
        b = rng.uniform(-0.5, 0.5)
        glm = AdditiveModel(b, {j: LinearTerm(w[j]) for j in range(d)})
        for eps in (0.0, 0.1):
            x = tuple(rng.uniform(-1, 1) for _ in range(d))
            label = rng.choice((1, -1))
            got = robust_loss_additive(space, glm, x, label, eps)
            corners = itertools.product(
                *[(max(v - eps, -5.0), min(v + eps, 5.0)) for v in x])
            scores = [b + sum(wj * cj for wj, cj in zip(w, c))
                      for c in corners]
            want = (1 if min(scores) < 0 else 0) if label == 1 \
                else (1 if max(scores) >= 0 else 0)
            assert got == want, (trial, eps)
    _ok("robust 0-1 loss equals corner enumeration for random GLMs "
        "(d <= 10, eps in {0, 0.1})")


def _run(args, env_extra=None):
    env = dict(os.environ)
    if env_extra:
        env.update(env_extra)
    return subprocess.run([sys.executable, "-m", "devcert.cli", *args],
                          capture_output=True, text=True, env=env)


def _strip_timing(text: str) -> str:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return text  # CSV outputs have no timing field
    if isinstance(doc, dict):
        doc.pop("timing", None)
    return json.dumps(doc, sort_keys=True)


def test_cli_determinism(tmp_path):
    commands = [
        ("certify", "--model", fx("gam.json"), "--reference",
         fx("tree_ref.json"), "--certset", f"balls:{fx('centers.csv')}:r=0.5"),
        ("certify", "--model", fx("forest.json"), "--reference",
         fx("tree_ref.json"), "--certset", "full"),
        ("sweep", "--model", fx("gam.json"), "--reference",
         fx("tree_ref.json"), "--centers", fx("centers.csv"),
         "--radii", "0,0.5,1.0"),
        ("breakdown", "--model", fx("gam.json"), "--reference",
         fx("tree_ref.json"), "--certset", "full"),
        ("contrib", "--model", fx("gam.json"), "--reference",
         fx("tree_ref.json"), "--certset", "full"),
        ("robust-acc", "--model", fx("gam.json"), "--data",
         fx("centers.csv"), "--labels", "label", "--eps", "0.1"),
        ("blackbox", "--model", fx("glm_a.json"), "--reference",
         fx("glm_b.json"), "--budget", "30", "--partition", "from-models"),
        ("validate", fx("forest.json")),
    ]
    for args in commands:
        a = _run(args)
        b = _run(args)
        assert a.returncode == b.returncode == 0, (args, a.stderr)
        assert _strip_timing(a.stdout) == _strip_timing(b.stdout), args

    out1 = tmp_path / "c1.json"
    out2 = tmp_path / "c2.json"
    for out in (out1, out2):
        r = _run(("convert", "--from", "rulelist", "--in", fx("rulelist.json"),
                  "--out", str(out)))
        assert r.returncode == 0
    assert out1.read_bytes() == out2.read_bytes()
    _ok("every CLI command is byte-deterministic modulo the timing field")
