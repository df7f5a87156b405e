"""Tests for instances, metrics, distributions, and the text format."""

from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from stochorient.core import (
    Atom,
    CorrKOInstance,
    FiniteMetric,
    InstanceFormatError,
    JointDistribution,
    TruncatedStats,
    log2_ceil,
    parse_instance,
    serialize_instance,
    split_rewards,
    start_reward,
    truncated_mean,
    validate_metric,
)


def line_metric():
    return FiniteMetric.from_rows([[0, 1, 3], [1, 0, 2], [3, 2, 0]])


def two_atom_dist():
    return JointDistribution.of(
        (1, Fraction(4), Fraction(1, 2)), (3, Fraction(2), Fraction(1, 2))
    )


def small_instance():
    dists = (
        JointDistribution.point(),
        two_atom_dist(),
        JointDistribution.point(0, Fraction(5)),
    )
    return CorrKOInstance(line_metric(), 0, 4, 3, dists)


def test_log2_ceil_values():
    assert log2_ceil(1) == 0
    assert log2_ceil(2) == 1
    assert log2_ceil(3) == 2
    assert log2_ceil(8) == 3
    assert log2_ceil(9) == 4


def test_metric_validation_catches_asymmetry_and_triangle():
    bad = FiniteMetric.from_rows([[0, 1, 5], [1, 0, 1], [5, 1, 0]])
    kinds = {v.kind for v in validate_metric(bad)}
    assert kinds == {"triangle"}
    lopsided = FiniteMetric.from_rows([[0, 1], [2, 0]])
    assert {v.kind for v in validate_metric(lopsided)} == {"symmetry"}
    assert validate_metric(line_metric()) == []


def test_metric_distance_lookup():
    m = line_metric()
    assert m.distance(0, 2) == 3
    assert m.distance(2, 1) == 2
    assert m.n == 3


def test_distribution_must_sum_to_one():
    with pytest.raises(ValueError):
        JointDistribution.of((1, Fraction(1), Fraction(1, 3)))


def test_truncated_mean_doubles_cap():
    d = two_atom_dist()
    assert truncated_mean(d, 0) == 1
    assert truncated_mean(d, 1) == Fraction(3, 2)
    assert truncated_mean(d, 2) == 2


def test_start_reward_drops_as_clock_runs_out():
    d = two_atom_dist()
    got = [start_reward(d, t, 3) for t in range(4)]
    assert got == [Fraction(3), Fraction(2), Fraction(2), Fraction(0)]
    assert all(a >= b for a, b in zip(got, got[1:]))


def test_truncated_stats_table_shape_and_scaling():
    inst = small_instance()
    stats = TruncatedStats.from_instance(inst)
    assert stats.scale_count == log2_ceil(inst.processing_budget) + 1
    assert stats.table[1] == (Fraction(1), Fraction(3, 2), Fraction(2))
    for row in stats.table:
        for j in range(len(row) - 1):
            assert row[j] * 2 >= row[j + 1]


def test_root_job_is_trivial():
    with pytest.raises(ValueError):
        CorrKOInstance(
            line_metric(),
            0,
            4,
            3,
            (JointDistribution.point(0, Fraction(1)),) * 3,
        )


def test_split_rewards_is_a_pointwise_partition():
    inst = small_instance()
    large, small = split_rewards(inst)
    half = inst.processing_budget // 2
    for v in range(inst.n):
        for i, atom in enumerate(inst.dists[v].atoms):
            big = large.dists[v].atoms[i]
            lit = small.dists[v].atoms[i]
            assert big.size == lit.size == atom.size
            assert big.prob == lit.prob == atom.prob
            assert big.reward + lit.reward == atom.reward
            if atom.size > half:
                assert lit.reward == 0
            else:
                assert big.reward == 0


def test_serialize_parse_round_trip():
    inst = small_instance()
    assert parse_instance(serialize_instance(inst)) == inst


def test_parse_rejects_malformed_header():
    text = serialize_instance(small_instance()).replace("corrko", "corrko2")
    with pytest.raises(InstanceFormatError):
        parse_instance(text)


def test_parse_rejects_truncated_body():
    lines = serialize_instance(small_instance()).splitlines()
    with pytest.raises(InstanceFormatError):
        parse_instance("\n".join(lines[:-1]) + "\n")


@given(st.integers(min_value=1, max_value=10_000))
def test_log2_ceil_matches_bit_length(w):
    assert 2 ** log2_ceil(w) >= w
    assert log2_ceil(w) == 0 or 2 ** (log2_ceil(w) - 1) < w


@given(
    st.lists(
        st.tuples(
            st.integers(min_value=0, max_value=6),
            st.integers(min_value=0, max_value=9),
        ),
        min_size=1,
        max_size=4,
        unique_by=lambda t: t[0],
    )
)
def test_truncated_mean_monotone_in_cap(pairs):
    total = len(pairs)
    atoms = tuple(
        Atom(size, Fraction(reward), Fraction(1, total)) for size, reward in pairs
    )
    d = JointDistribution(atoms)
    means = [truncated_mean(d, j) for j in range(5)]
    assert all(a <= b for a, b in zip(means, means[1:]))
    assert means[-1] <= sum(a.size * a.prob for a in atoms)
