"""Tests for the exact oracles and their budget caps."""

from fractions import Fraction

import pytest

from stochorient.adversarial import gen_random
from stochorient.core import CorrKOInstance, FiniteMetric, JointDistribution, split_rewards
from stochorient.oracle import (
    OracleBudgetCaps,
    OracleBudgetError,
    adaptivity_gap,
    opt_adaptive,
    opt_cancellation_bruteforce,
    opt_fixed_order,
    opt_nonadaptive,
    opt_nonadaptive_restricted,
)
from stochorient.policy import (
    eval_adaptive_exact,
    eval_cancellation_exact,
    eval_nonadaptive_exact,
    validate_policy,
)


def small_instance():
    metric = FiniteMetric.from_rows([[0, 1, 3], [1, 0, 2], [3, 2, 0]])
    dists = (
        JointDistribution.point(),
        JointDistribution.of((1, Fraction(4), Fraction(1, 2)), (3, Fraction(2), Fraction(1, 2))),
        JointDistribution.point(0, Fraction(5)),
    )
    return CorrKOInstance(metric, 0, 4, 3, dists)


def test_adaptive_optimum_on_a_hand_instance():
    inst = small_instance()
    opt = opt_adaptive(inst)
    assert opt.value == 8
    assert eval_adaptive_exact(inst, opt.tree) == opt.value
    validate_policy(inst, opt.tree)


def test_nonadaptive_optimum_matches_its_own_evaluator():
    inst = small_instance()
    opt = opt_nonadaptive(inst)
    assert opt.value == 8
    assert opt.policy.sequence[0] == inst.root
    assert eval_nonadaptive_exact(inst, opt.policy) == opt.value


def test_frozen_values_on_seeded_fixtures():
    inst = gen_random(4, travel_budget=5, processing_budget=6, max_atoms=2, seed=1)
    assert opt_adaptive(inst).value == Fraction(3, 4)
    assert opt_nonadaptive(inst).value == Fraction(3, 4)
    inst = gen_random(4, travel_budget=5, processing_budget=6, max_atoms=2, seed=2)
    assert opt_adaptive(inst).value == 6
    inst = gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=17)
    assert opt_adaptive(inst).value == Fraction(1735, 432)
    assert opt_nonadaptive(inst).value == Fraction(1735, 432)


def test_adaptivity_gap_is_one_when_order_is_forced():
    inst = gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=17)
    assert adaptivity_gap(inst) == 1


def test_adaptive_dominates_every_fixed_sequence():
    inst = gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=3)
    ada = opt_adaptive(inst).value
    non = opt_nonadaptive(inst)
    assert ada >= non.value
    assert ada >= eval_nonadaptive_exact(inst, non.policy)


def test_fixed_order_interpolates_between_skip_and_visit():
    inst = small_instance()
    assert opt_fixed_order(inst, (1, 2)) == 8
    # Reversed order: going to 2 first (cost 3) leaves no budget for 1,
    # and the best is to skip 2 and take 1 alone.
    assert opt_fixed_order(inst, (2, 1)) == 5
    assert opt_fixed_order(inst, ()) == 0


def test_restricted_search_agrees_on_its_own_family():
    # On instances whose levels drive the restriction, the restricted search
    # can only see a subset of sequences, so it is a lower bound.
    from stochorient.adversarial import gen_adaptgap

    inst = gen_adaptgap(4)
    caps = OracleBudgetCaps(
        max_vertices=inst.n,
        max_processing_budget=inst.processing_budget,
        max_states=50_000_000,
    )
    full = opt_nonadaptive(inst, caps)
    restricted = opt_nonadaptive_restricted(inst)
    assert restricted.restricted
    assert restricted.value <= full.value
    assert restricted.value == Fraction(803, 2048)
    assert full.value == Fraction(803, 2048)


def test_cancellation_bruteforce_dominates_plain_adaptive():
    small = split_rewards(gen_random(4, 6, 6, 3, seed=701))[1]
    cancel = opt_cancellation_bruteforce(small)
    ada = opt_adaptive(small)
    assert cancel.value == Fraction(5, 4)
    assert cancel.value >= ada.value
    assert eval_cancellation_exact(small, cancel.policy) == cancel.value


def test_caps_reject_oversized_instances():
    inst = gen_random(6, travel_budget=6, processing_budget=8, max_atoms=2, seed=0)
    caps = OracleBudgetCaps(max_vertices=4)
    with pytest.raises(OracleBudgetError):
        opt_adaptive(inst, caps)
    with pytest.raises(OracleBudgetError):
        opt_nonadaptive(inst, caps)


def test_caps_reject_state_blowup():
    inst = gen_random(5, travel_budget=6, processing_budget=8, max_atoms=3, seed=1)
    caps = OracleBudgetCaps(max_states=10)
    with pytest.raises(OracleBudgetError):
        opt_adaptive(inst, caps)
