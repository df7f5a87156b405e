"""Tests for policy objects, exact evaluators, simulation, and the policy format."""

from fractions import Fraction

import pytest

from stochorient.core import CorrKOInstance, FiniteMetric, JointDistribution
from stochorient.policy import (
    AdaptivePolicyTree,
    CancellationPolicy,
    NonAdaptivePolicy,
    PolicyNode,
    PolicyValidationError,
    eval_adaptive_exact,
    eval_cancellation_exact,
    eval_nonadaptive_exact,
    parse_policy,
    serialize_policy,
    simulate,
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


def branching_tree():
    # Visit 1; on the short outcome walk on to 2, otherwise stop.
    return AdaptivePolicyTree(
        PolicyNode(0, ((0, PolicyNode(1, ((0, PolicyNode(2)), (1, None)))),))
    )


def cancel_after_one():
    return CancellationPolicy(
        (0, 1, 2),
        (
            ((None, Fraction(1)),),
            ((1, Fraction(1)),),
            ((None, Fraction(1)),),
        ),
    )


def test_nonadaptive_value_counts_only_completed_jobs():
    inst = small_instance()
    assert eval_nonadaptive_exact(inst, NonAdaptivePolicy((0, 1, 2))) == 8
    assert eval_nonadaptive_exact(inst, NonAdaptivePolicy((0, 1))) == 3
    assert eval_nonadaptive_exact(inst, NonAdaptivePolicy((0,))) == 0


def test_adaptive_tree_value():
    inst = small_instance()
    assert eval_adaptive_exact(inst, branching_tree()) == Fraction(11, 2)


def test_cancellation_value_pays_nothing_for_cancelled_jobs():
    inst = small_instance()
    # Cutting vertex 1 off after one unit keeps the short outcome's reward
    # and frees the clock for vertex 2 on the long one.
    assert eval_cancellation_exact(inst, cancel_after_one()) == 7


def test_nonadaptive_evaluation_stops_at_the_affordable_prefix():
    inst = small_instance()
    # d(0,2) + d(2,1) = 5 > 4, so vertex 1 is never reached.
    clipped = eval_nonadaptive_exact(inst, NonAdaptivePolicy((0, 2, 1)))
    assert clipped == eval_nonadaptive_exact(inst, NonAdaptivePolicy((0, 2)))


def test_validate_policy_rejects_travel_overrun_in_trees():
    inst = small_instance()
    tree = AdaptivePolicyTree(
        PolicyNode(0, ((0, PolicyNode(2, ((0, PolicyNode(1)),))),))
    )
    with pytest.raises(PolicyValidationError):
        validate_policy(inst, tree)


def test_validate_policy_rejects_wrong_start():
    inst = small_instance()
    with pytest.raises(PolicyValidationError):
        validate_policy(inst, NonAdaptivePolicy((1, 2)))


def test_validate_policy_rejects_unknown_branch():
    inst = small_instance()
    tree = AdaptivePolicyTree(PolicyNode(0, ((0, PolicyNode(1, ((7, None),))),)))
    with pytest.raises(PolicyValidationError):
        validate_policy(inst, tree)


def test_validate_policy_accepts_all_three_kinds():
    inst = small_instance()
    validate_policy(inst, NonAdaptivePolicy((0, 1, 2)))
    validate_policy(inst, branching_tree())
    validate_policy(inst, cancel_after_one())


def test_policy_round_trips_through_text():
    for policy in (NonAdaptivePolicy((0, 1, 2)), branching_tree(), cancel_after_one()):
        assert parse_policy(serialize_policy(policy)) == policy


def test_parse_policy_rejects_garbage():
    with pytest.raises(ValueError):
        parse_policy("policy nonadaptive\nseq one two\n")
    with pytest.raises(ValueError):
        parse_policy("nonsense\n")


def test_simulation_is_seeded_and_tracks_the_exact_value():
    inst = small_instance()
    policy = NonAdaptivePolicy((0, 1, 2))
    a = simulate(inst, policy, 2000, seed=5)
    b = simulate(inst, policy, 2000, seed=5)
    assert a == b
    assert a.trials == 2000
    exact = eval_nonadaptive_exact(inst, policy)
    assert abs(a.mean - exact) < Fraction(1, 4)


def test_simulation_handles_adaptive_and_cancellation():
    inst = small_instance()
    tree_mean = simulate(inst, branching_tree(), 3000, seed=1).mean
    assert abs(tree_mean - Fraction(11, 2)) < Fraction(1, 4)
    cancel_mean = simulate(inst, cancel_after_one(), 3000, seed=1).mean
    assert abs(cancel_mean - 7) < Fraction(1, 4)


def test_thresholds_must_form_a_distribution():
    with pytest.raises(ValueError):
        CancellationPolicy((0, 1), (((None, Fraction(1)),), ((1, Fraction(1, 2)),)))
    with pytest.raises(ValueError):
        CancellationPolicy((0, 1), (((None, Fraction(1)),), ((0, Fraction(1)),)))
