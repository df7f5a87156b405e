"""Tests for the instance generators."""

from fractions import Fraction

import pytest

from stochorient.adversarial import (
    AdaptGapInstance,
    adaptgap_policy,
    gen_2point,
    gen_adaptgap,
    gen_appendixA,
    gen_bernoulli,
    gen_random,
)
from stochorient.core import validate_metric
from stochorient.oracle import opt_fixed_order
from stochorient.policy import eval_adaptive_exact, validate_policy


def test_gen_random_is_deterministic_and_well_formed():
    a = gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=9)
    b = gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=9)
    assert a == b
    assert a != gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=10)
    assert a.n == 5
    assert validate_metric(a.metric) == []
    assert a.dists[a.root].atoms[0].size == 0
    assert a.dists[a.root].atoms[0].reward == 0
    for dist in a.dists:
        assert sum(atom.prob for atom in dist.atoms) == 1
        assert len(dist.atoms) <= 3


def test_gen_adaptgap_shape():
    inst = gen_adaptgap(4)
    assert isinstance(inst, AdaptGapInstance)
    # A full binary tree of height 4 has 2^4 - 1 internal-and-leaf nodes
    # plus the added root vertex.
    assert inst.n == 2**4
    assert validate_metric(inst.metric) == []
    walker = adaptgap_policy(inst)
    validate_policy(inst, walker)
    assert eval_adaptive_exact(inst, walker) == Fraction(15, 32)


def test_gen_adaptgap_rejects_short_trees():
    with pytest.raises(ValueError):
        gen_adaptgap(3)


def test_appendix_family_orders():
    for n in (2, 3, 6):
        w = (1 << (n + 1)) + 1
        inst = gen_appendixA(n, w)
        assert inst.n == n + 1
        order = tuple(range(1, n + 1))
        assert opt_fixed_order(inst, order) == Fraction(1, n)
        reverse = tuple(reversed(order))
        expect = 1 - (1 - Fraction(1, n)) ** n
        assert opt_fixed_order(inst, reverse) == expect


def test_appendix_rejects_tight_processing_budget():
    with pytest.raises(ValueError):
        gen_appendixA(3, 16)


def test_two_point_fixture_is_canonical():
    inst = gen_2point(5, travel_budget=6, processing_budget=9, seed=4)
    assert inst.n == 5
    half = inst.processing_budget // 2
    for v in range(inst.n):
        if v == inst.root:
            continue
        atoms = inst.dists[v].atoms
        assert len(atoms) == 2
        rewarded, dud = atoms
        assert rewarded.reward > 0 and rewarded.size > half
        assert dud.reward == 0 and dud.size <= half
        assert rewarded.prob <= Fraction(1, 2)


def test_bernoulli_fixture_has_one_positive_size_per_vertex():
    inst = gen_bernoulli(5, travel_budget=6, processing_budget=8, seed=2)
    for v in range(inst.n):
        positive = {a.size for a in inst.dists[v].atoms if a.size > 0}
        assert len(positive) <= 1
        for atom in inst.dists[v].atoms:
            if atom.reward:
                assert atom.size > 0


def test_generators_respect_budgets():
    inst = gen_random(6, travel_budget=7, processing_budget=8, max_atoms=2, seed=0)
    assert inst.travel_budget == 7
    assert inst.processing_budget == 8
    for dist in inst.dists:
        for atom in dist.atoms:
            assert atom.size >= 0
