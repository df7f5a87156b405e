"""Tests for the deterministic path solvers."""

import itertools
import random
from fractions import Fraction

import pytest

from stochorient.core import FiniteMetric
from stochorient.detsolve import (
    KnapOKDInstance,
    KnapOrientInstance,
    OrientKDInstance,
    PathInfeasibleError,
    PortalStructureError,
    deadline_buckets,
    extract_okd_portals,
    knap_okd_exact,
    knap_orient_exact,
    knap_orient_violations,
    lagrangian_knap_reduce,
    orienteering_exact,
    orientkd_bucketing,
    orientkd_exact,
    orientkd_portal_alg,
    orientkd_violations,
    preprocess_orientkd,
    walk_length,
)


def line_metric():
    return FiniteMetric.from_rows([[0, 2, 3], [2, 0, 1], [3, 1, 0]])


def grid_metric(rng, n, span=3):
    pts = [(rng.randint(0, span), rng.randint(0, span)) for _ in range(n)]
    rows = [[abs(p[0] - q[0]) + abs(p[1] - q[1]) for q in pts] for p in pts]
    return FiniteMetric.from_rows(rows)


def random_okd(seed):
    rng = random.Random(f"okd-test:{seed}")
    n = 4 + seed % 3
    return OrientKDInstance(
        metric=grid_metric(rng, n),
        root=0,
        length_budget=rng.randint(2, 8),
        rewards=tuple(Fraction(rng.randint(0, 6)) for _ in range(n)),
        weights=(0,) + tuple(rng.randint(0, 3) for _ in range(n - 1)),
        deadlines=tuple(rng.randint(0, 8) for _ in range(n)),
    )


def okd_bruteforce(inst):
    non_root = [v for v in range(inst.metric.n) if v != inst.root]
    best = Fraction(0)
    for k in range(len(non_root) + 1):
        for perm in itertools.permutations(non_root, k):
            path = (inst.root,) + perm
            if orientkd_violations(inst, path):
                continue
            reward = sum(inst.rewards[v] for v in path)
            best = max(best, reward)
    return best


def test_walk_length_sums_consecutive_distances():
    m = line_metric()
    assert walk_length(m, (0,)) == 0
    assert walk_length(m, (0, 1, 2)) == 3
    assert walk_length(m, (0, 2, 1)) == 4


def test_orienteering_exact_on_a_line():
    inst = KnapOrientInstance(
        line_metric(), 0, None, 3, (Fraction(0), Fraction(5), Fraction(4))
    )
    res = orienteering_exact(inst)
    assert res.reward == 9
    assert res.path == (0, 1, 2)


def test_orienteering_respects_the_budget():
    inst = KnapOrientInstance(
        line_metric(), 0, None, 2, (Fraction(0), Fraction(5), Fraction(4))
    )
    res = orienteering_exact(inst)
    assert res.reward == 5
    assert res.path == (0, 1)


def test_knapsack_constraint_prunes_the_far_vertex():
    inst = KnapOrientInstance(
        line_metric(),
        0,
        None,
        3,
        (Fraction(0), Fraction(5), Fraction(4)),
        knap_weights=(Fraction(0), Fraction(2), Fraction(2)),
        knap_budget=Fraction(3),
    )
    res = knap_orient_exact(inst)
    assert res.reward == 5
    assert res.path == (0, 1)
    assert knap_orient_violations(inst, res.path) == []
    assert knap_orient_violations(inst, (0, 1, 2))


def test_lagrangian_reduction_with_an_exact_inner_solver():
    inst = KnapOrientInstance(
        line_metric(),
        0,
        None,
        3,
        (Fraction(0), Fraction(5), Fraction(4)),
        knap_weights=(Fraction(0), Fraction(2), Fraction(2)),
        knap_budget=Fraction(3),
    )
    res = lagrangian_knap_reduce(orienteering_exact, Fraction(1), inst)
    assert knap_orient_violations(inst, res.path) == []
    exact = knap_orient_exact(inst)
    assert res.reward * 3 * Fraction(101, 100) >= exact.reward


def test_lagrangian_factor_over_seeded_fixtures():
    rng = random.Random("lagrangian-sweep")
    checked = 0
    for _ in range(40):
        n = rng.randint(3, 6)
        metric = grid_metric(rng, n)
        inst = KnapOrientInstance(
            metric,
            0,
            None,
            rng.randint(2, 9),
            tuple(Fraction(rng.randint(0, 8)) for _ in range(n)),
            knap_weights=(Fraction(0),)
            + tuple(Fraction(rng.randint(0, 4)) for _ in range(n - 1)),
            knap_budget=Fraction(rng.randint(1, 8)),
        )
        exact = knap_orient_exact(inst)
        res = lagrangian_knap_reduce(orienteering_exact, Fraction(1), inst)
        assert knap_orient_violations(inst, res.path) == []
        assert res.reward * 3 * Fraction(101, 100) >= exact.reward
        checked += 1
    assert checked == 40


def test_orientkd_exact_matches_permutation_search():
    for seed in range(25):
        inst = random_okd(seed)
        assert orientkd_exact(inst).reward == okd_bruteforce(inst)


def test_orientkd_rejects_root_past_its_deadline():
    inst = OrientKDInstance(
        metric=line_metric(),
        root=0,
        length_budget=3,
        rewards=(Fraction(1), Fraction(1), Fraction(1)),
        weights=(2, 0, 0),
        deadlines=(1, 4, 4),
    )
    with pytest.raises(PathInfeasibleError):
        orientkd_exact(inst)


def test_preprocess_drops_unreachable_vertices():
    inst = OrientKDInstance(
        metric=line_metric(),
        root=0,
        length_budget=3,
        rewards=(Fraction(0), Fraction(5), Fraction(4)),
        weights=(0, 2, 5),
        deadlines=(0, 2, 3),
    )
    pre = preprocess_orientkd(inst)
    # Vertex 2 can never meet its deadline: its own weight exceeds it.
    assert pre.rewards[2] == 0 or pre.deadlines[2] < pre.weights[2]
    assert orientkd_exact(pre).reward == orientkd_exact(inst).reward


def test_deadline_buckets_group_by_scale():
    inst = OrientKDInstance(
        metric=FiniteMetric.from_rows([[0, 1, 1, 1], [1, 0, 1, 1], [1, 1, 0, 1], [1, 1, 1, 0]]),
        root=0,
        length_budget=3,
        rewards=(Fraction(0), Fraction(1), Fraction(2), Fraction(3)),
        weights=(0, 1, 1, 1),
        deadlines=(0, 2, 5, 0),
    )
    buckets = deadline_buckets(inst)
    grouped = {v for vs in buckets.values() for v in vs}
    assert grouped <= set(range(1, 4))
    # The two positive deadlines sit one scale apart.
    positive = sorted(j for j in buckets if j >= 0)
    assert len(positive) == 2


def test_bucketing_factor_against_the_exact_solver():
    for seed in range(25):
        inst = random_okd(seed)
        opt = orientkd_exact(inst)
        buckets = deadline_buckets(inst)
        scales = sum(1 for j in buckets if j >= 0)
        divisor = 3 * (max(scales - 1, 0) + 2)
        res = orientkd_bucketing(inst)
        assert orientkd_violations(inst, res.path) == []
        assert res.reward * divisor >= opt.reward


def test_portal_extraction_properties_hold_on_optimal_paths():
    seen = 0
    for seed in range(25):
        inst = random_okd(seed)
        opt = orientkd_exact(inst)
        if len(opt.path) < 2:
            continue
        seen += 1
        st = extract_okd_portals(opt.path, inst)
        assert st.portals[0] == inst.root
        assert st.portals[-1] == opt.path[-1]
        assert len(st.witnesses) == len(st.portals) - 1
        assert sum(st.length_bounds) <= inst.length_budget
    assert seen >= 10


def test_portal_extraction_keeps_half_jointly_with_the_chain():
    # A rewarded root on a two-vertex optimal path: the single witness tail
    # sees only the non-root reward, and the chain must make up the rest.
    inst = OrientKDInstance(
        metric=FiniteMetric.from_rows([[0, 2, 2, 3], [2, 0, 2, 3], [2, 2, 0, 1], [3, 3, 1, 0]]),
        root=0,
        length_budget=2,
        rewards=(Fraction(2), Fraction(1), Fraction(3), Fraction(1)),
        weights=(2, 1, 0, 2),
        deadlines=(8, 0, 8, 7),
    )
    opt = orientkd_exact(inst)
    assert opt.reward == 5
    st = extract_okd_portals(opt.path, inst)
    tails = sum(sum(inst.rewards[v] for v in w[1:]) for w in st.witnesses)
    chain = sum(inst.rewards[v] for v in st.portals)
    assert 2 * (tails + chain) >= opt.reward


def test_portal_algorithm_clears_an_eighth_with_oracle_portals():
    for seed in range(25):
        inst = random_okd(seed)
        opt = orientkd_exact(inst)
        if len(opt.path) < 2:
            continue
        st = extract_okd_portals(opt.path, inst)
        res = orientkd_portal_alg(inst, st)
        assert orientkd_violations(inst, res.path) == []
        assert res.reward * 8 >= opt.reward


def test_portal_structure_validation_rejects_tampering():
    inst = random_okd(1)
    opt = orientkd_exact(inst)
    if len(opt.path) < 2:
        pytest.skip("fixture optimum is the bare root")
    st = extract_okd_portals(opt.path, inst)
    from dataclasses import replace

    bad = replace(st, length_bounds=tuple(b + 100 for b in st.length_bounds))
    with pytest.raises(PortalStructureError):
        orientkd_portal_alg(inst, bad)


def test_knap_okd_exact_respects_the_extra_knapsack():
    inst = KnapOKDInstance(
        metric=line_metric(),
        root=0,
        length_budget=3,
        rewards=(Fraction(0), Fraction(5), Fraction(4)),
        weights=(0, 2, 1),
        deadlines=(0, 2, 3),
        extra_weights=(Fraction(0), Fraction(1, 2), Fraction(3, 4)),
        extra_budget=Fraction(1),
    )
    res = knap_okd_exact(inst)
    assert res.reward == 5
    assert res.path == (0, 1)
    without = orientkd_exact(inst.without_extra())
    assert without.reward == 9
