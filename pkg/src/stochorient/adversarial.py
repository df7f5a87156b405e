"""Instance generators: adversarial families and random fixtures.

The centerpiece is the adaptivity-gap family: a complete binary tree whose
edge lengths make the travel budget exactly one root-leaf descent and
whose job sizes are enormous powers of two engineered so that an adaptive
walker can always steer toward vertices whose big rewarded outcome still
fits the processing budget exactly, while any fixed sequence wastes most
of its probability mass.  Heights must be perfect squares so that 1/sqrt(H)
is an exact rational.

Vertex ids: 0 is the dummy root glued at distance 0 to the tree root; tree
nodes use heap indices (node i has children 2i and 2i+1, left child even).
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction

from .core import Atom, CorrKOInstance, FiniteMetric, JointDistribution
from .policy import AdaptivePolicyTree, PolicyNode

__all__ = [
    "AdaptGapInstance",
    "adaptgap_policy",
    "gen_adaptgap",
    "gen_appendixA",
    "gen_bernoulli",
    "gen_random",
    "gen_2point",
]


@dataclass(frozen=True)
class AdaptGapInstance(CorrKOInstance):
    """Adaptivity-gap instance with its tree annotations.

    ``levels[v]`` is the tree level of vertex v (leaves are level 1, the
    tree root is level ``height``, and the dummy root sits above at
    ``height + 1``).  The annotations are what the explicit adaptive
    policy and the restricted sequence search key on.
    """

    height: int = 0
    levels: tuple[int, ...] = ()


def _heap_level(height: int, i: int) -> int:
    return height - (i.bit_length() - 1)


def _right_turn_ancestors(i: int) -> list[int]:
    """Strict ancestors whose right child lies on the path down to i."""
    out = []
    j = i
    while j > 1:
        parent = j >> 1
        if j & 1:
            out.append(parent)
        j = parent
    return out


def gen_adaptgap(height: int) -> AdaptGapInstance:
    """Build the height-H adaptivity-gap tree instance.

    Requires H >= 4 and H a perfect square.  The instance has 2^H vertices
    (2^H - 1 tree nodes plus the dummy root), travel budget 2^{H-1} - 1
    (exactly one full descent), and processing budget W = 2^{2^{H+1}}.
    Each tree node mixes a zero outcome, an unrewarded blocker size, and a
    rewarded size that fits W exactly when every right-turn ancestor's
    blocker landed.
    """
    if height < 4:
        raise ValueError("adaptivity-gap construction needs height >= 4")
    root_h = math.isqrt(height)
    if root_h * root_h != height:
        raise ValueError(
            f"height must be a perfect square so 1/sqrt(H) is rational, got {height}"
        )
    n = 1 << height
    big_w = 1 << (1 << (height + 1))
    travel_budget = (1 << (height - 1)) - 1

    p_blocker = Fraction(1, root_h)
    p_reward = Fraction(1, height)
    p_zero = 1 - p_blocker - p_reward

    levels = [height + 1] + [_heap_level(height, i) for i in range(1, n)]

    def blocker_size(i: int) -> int:
        exponent = 1 << levels[i]
        for w in _right_turn_ancestors(i):
            exponent += 1 << levels[w]
        return 1 << exponent

    dists: list[JointDistribution] = [JointDistribution.point()]
    for i in range(1, n):
        rights = _right_turn_ancestors(i)
        s_reward = big_w - sum(blocker_size(w) for w in rights)
        reward = (1 - p_blocker) ** len(rights)
        dists.append(
            JointDistribution(
                (
                    Atom(0, Fraction(0), p_zero),
                    Atom(blocker_size(i), Fraction(0), p_blocker),
                    Atom(s_reward, reward, p_reward),
                )
            )
        )

    depth_to_root = [0] * n
    for i in range(2, n):
        depth_to_root[i] = depth_to_root[i >> 1] + (1 << (levels[i] - 1))

    def tree_dist(a: int, b: int) -> int:
        x, y = a, b
        while x != y:
            if x > y:
                x >>= 1
            else:
                y >>= 1
        return depth_to_root[a] + depth_to_root[b] - 2 * depth_to_root[x]

    rows = []
    for a in range(n):
        row = []
        for b in range(n):
            if a == b:
                row.append(0)
            elif a == 0:
                row.append(depth_to_root[b])
            elif b == 0:
                row.append(depth_to_root[a])
            else:
                row.append(tree_dist(a, b))
        rows.append(tuple(row))

    return AdaptGapInstance(
        metric=FiniteMetric(tuple(rows)),
        root=0,
        travel_budget=travel_budget,
        processing_budget=big_w,
        dists=tuple(dists),
        height=height,
        levels=tuple(levels),
    )


def adaptgap_policy(inst: CorrKOInstance) -> AdaptivePolicyTree:
    """The explicit adaptive walker for the adaptivity-gap family.

    Descend left on the zero outcome, right on the blocker, stop on the
    rewarded outcome or at a leaf.  Right turns bank exactly the blocker
    sizes that the rewarded outcome of every right-subtree node budgets
    for, so the rewarded size always completes at W on the nose.
    """
    if not isinstance(inst, AdaptGapInstance):
        raise ValueError("adaptgap_policy needs an instance from gen_adaptgap")
    n = inst.n

    def build(i: int, elapsed: int, reach: Fraction) -> PolicyNode:
        children = []
        left, right = 2 * i, 2 * i + 1
        if left < n:
            children.append((0, build(left, elapsed, reach * inst.dists[i].atoms[0].prob)))
        if right < n:
            blocker = inst.dists[i].atoms[1].size
            children.append(
                (1, build(right, elapsed + blocker, reach * inst.dists[i].atoms[1].prob))
            )
        return PolicyNode(i, tuple(children), elapsed=elapsed, reach_prob=reach)

    root = PolicyNode(
        0, ((0, build(1, 0, Fraction(1))),), elapsed=0, reach_prob=Fraction(1)
    )
    return AdaptivePolicyTree(root)


def gen_appendixA(n: int, processing_budget: int) -> CorrKOInstance:
    """Items whose sensible processing order is reverse index order.

    Requires W > 2^{n+1}.  All travel is free (zero metric, zero budget).
    Item i's rewarded size W - 2^{n-i+1} + 1 leaves room for the unrewarded
    sizes of all later-indexed items but not for an earlier-indexed rewarded
    size, so scanning n..1 keeps every attempt alive while scanning 1..n
    kills all but the first.
    """
    if n < 1:
        raise ValueError("need at least one item")
    if processing_budget <= 1 << (n + 1):
        raise ValueError(
            f"processing budget must exceed 2^{n + 1} = {1 << (n + 1)}, got {processing_budget}"
        )
    rows = tuple(tuple(0 for _ in range(n + 1)) for _ in range(n + 1))
    dists: list[JointDistribution] = [JointDistribution.point()]
    p_hit = Fraction(1, n)
    for i in range(1, n + 1):
        big = processing_budget - (1 << (n - i + 1)) + 1
        small = 1 << (n - i)
        dists.append(
            JointDistribution(
                (Atom(big, Fraction(1), p_hit), Atom(small, Fraction(0), 1 - p_hit))
            )
        )
    return CorrKOInstance(FiniteMetric(rows), 0, 0, processing_budget, tuple(dists))


def _grid_metric(rng: random.Random, n: int, travel_budget: int) -> FiniteMetric:
    """Random integer grid points under L1 distance, then shortest-path closed."""
    span = max(travel_budget, 2)
    points = [(rng.randint(0, span), rng.randint(0, span)) for _ in range(n)]
    dist = [
        [abs(p[0] - q[0]) + abs(p[1] - q[1]) for q in points] for p in points
    ]
    for k in range(n):
        for i in range(n):
            for j in range(n):
                via = dist[i][k] + dist[k][j]
                if via < dist[i][j]:
                    dist[i][j] = via
    return FiniteMetric(tuple(tuple(row) for row in dist))


def gen_random(
    n: int,
    travel_budget: int,
    processing_budget: int,
    max_atoms: int,
    seed: int,
) -> CorrKOInstance:
    """Seeded random instance: grid metric, small rational mixtures."""
    if n < 1 or max_atoms < 1:
        raise ValueError("need n >= 1 and max_atoms >= 1")
    rng = random.Random(f"gen_random:{seed}")
    metric = _grid_metric(rng, n, travel_budget)
    dists: list[JointDistribution] = [JointDistribution.point()]
    for _v in range(1, n):
        k = rng.randint(1, max_atoms)
        weights = [rng.randint(1, 9) for _ in range(k)]
        total = sum(weights)
        atoms = []
        for w in weights:
            size = rng.randint(0, processing_budget + 1)
            reward = Fraction(rng.randint(0, 8), rng.randint(1, 4))
            atoms.append(Atom(size, reward, Fraction(w, total)))
        dists.append(JointDistribution(tuple(atoms)))
    return CorrKOInstance(metric, 0, travel_budget, processing_budget, tuple(dists))


def _two_point_dists(
    rng: random.Random, n: int, processing_budget: int, zero_small: bool
) -> tuple[JointDistribution, ...]:
    half = processing_budget // 2
    dists: list[JointDistribution] = [JointDistribution.point()]
    for _v in range(1, n):
        p = Fraction(rng.randint(1, 8), 16)
        big = rng.randint(half + 1, processing_budget)
        small = 0 if zero_small else rng.randint(0, half)
        reward = Fraction(rng.randint(1, 12), rng.randint(1, 4))
        dists.append(
            JointDistribution((Atom(big, reward, p), Atom(small, Fraction(0), 1 - p)))
        )
    return tuple(dists)


def gen_2point(n: int, travel_budget: int, processing_budget: int, seed: int) -> CorrKOInstance:
    """Canonical two-outcome instance: rewarded size > floor(W/2) >= other size,
    reward probability at most 1/2."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = random.Random(f"gen_2point:{seed}")
    metric = _grid_metric(rng, n, travel_budget)
    dists = _two_point_dists(rng, n, processing_budget, zero_small=False)
    return CorrKOInstance(metric, 0, travel_budget, processing_budget, dists)


def gen_bernoulli(n: int, travel_budget: int, processing_budget: int, seed: int) -> CorrKOInstance:
    """Weighted Bernoulli jobs: rewarded size with probability p, else size 0."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = random.Random(f"gen_bernoulli:{seed}")
    metric = _grid_metric(rng, n, travel_budget)
    dists = _two_point_dists(rng, n, processing_budget, zero_small=True)
    return CorrKOInstance(metric, 0, travel_budget, processing_budget, dists)
