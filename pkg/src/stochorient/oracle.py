"""Exact ground-truth optima for small correlated orienteering instances.

These solvers are deliberate brute force with memoization: they exist to
certify the approximation pipelines, not to scale.  All values are exact
rationals.  Budget caps are explicit arguments so a caller can knowingly
raise them for structured instances (for example the adaptivity-gap family
at height 4, whose processing budget far exceeds the default cap but whose
reachable state space stays tiny).

Tie-breaking everywhere: stopping is preferred to continuing at equal
value, and smaller vertex ids are preferred among equal continuations, so
returned policies are unique and runs are reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

from .core import CorrKOInstance, start_reward
from .policy import (
    AdaptivePolicyTree,
    CancellationPolicy,
    NonAdaptivePolicy,
    PolicyNode,
    eval_cancellation_exact,
)

__all__ = [
    "AdaptiveOptimum",
    "CancellationOptimum",
    "NonAdaptiveOptimum",
    "OracleBudgetCaps",
    "OracleBudgetError",
    "adaptivity_gap",
    "opt_adaptive",
    "opt_cancellation_bruteforce",
    "opt_fixed_order",
    "opt_nonadaptive",
    "opt_nonadaptive_restricted",
]


class OracleBudgetError(RuntimeError):
    """Raised when an oracle run would exceed its stated budget caps."""


@dataclass(frozen=True)
class OracleBudgetCaps:
    """Hard limits on oracle effort.

    The defaults suit random desk-scale fixtures.  Structured instances
    with huge processing budgets but few reachable states need explicitly
    larger caps; forcing the caller to spell that out is the point.
    """

    max_vertices: int = 8
    max_processing_budget: int = 64
    max_states: int = 2_000_000

    def admit(self, inst: CorrKOInstance) -> None:
        if inst.n > self.max_vertices:
            raise OracleBudgetError(
                f"instance has {inst.n} vertices, cap max_vertices={self.max_vertices}"
            )
        if inst.processing_budget > self.max_processing_budget:
            raise OracleBudgetError(
                f"processing budget {inst.processing_budget} exceeds cap "
                f"max_processing_budget={self.max_processing_budget}"
            )


@dataclass(frozen=True)
class AdaptiveOptimum:
    value: Fraction
    tree: AdaptivePolicyTree


@dataclass(frozen=True)
class NonAdaptiveOptimum:
    value: Fraction
    policy: NonAdaptivePolicy
    restricted: bool = False


@dataclass(frozen=True)
class CancellationOptimum:
    value: Fraction
    policy: CancellationPolicy


def opt_adaptive(inst: CorrKOInstance, caps: OracleBudgetCaps | None = None) -> AdaptiveOptimum:
    """Optimal adaptive decision tree by exhaustive memoized recursion.

    States are (visited set, last vertex, elapsed processing, travel used);
    elapsed values are kept sparse, so only running totals that are
    actually reachable are ever enumerated.  The returned tree reproduces
    the optimal value under eval_adaptive_exact and carries elapsed and
    reach-probability annotations.
    """
    caps = caps or OracleBudgetCaps()
    caps.admit(inst)
    d = inst.metric.distances
    big_w = inst.processing_budget
    budget = inst.travel_budget
    dists = inst.dists
    n = inst.n
    memo: dict[tuple[int, int, int, int], Fraction] = {}

    def value(mask: int, last: int, elapsed: int, travel: int) -> Fraction:
        key = (mask, last, elapsed, travel)
        cached = memo.get(key)
        if cached is not None:
            return cached
        if len(memo) >= caps.max_states:
            raise OracleBudgetError(
                f"adaptive oracle exceeded max_states={caps.max_states}"
            )
        best = Fraction(0)
        row = d[last]
        for u in range(n):
            if mask >> u & 1:
                continue
            travel2 = travel + row[u]
            if travel2 > budget:
                continue
            gain = Fraction(0)
            mask2 = mask | 1 << u
            for atom in dists[u].atoms:
                done = elapsed + atom.size
                if done <= big_w:
                    gain += atom.prob * (atom.reward + value(mask2, u, done, travel2))
            if gain > best:
                best = gain
        memo[key] = best
        return best

    def rebuild(mask: int, last: int, elapsed: int, travel: int, reach: Fraction) -> PolicyNode | None:
        """Re-run the argmax from a solved state and build the chosen subtree."""
        best = Fraction(0)
        choice = None
        row = d[last]
        for u in range(n):
            if mask >> u & 1:
                continue
            travel2 = travel + row[u]
            if travel2 > budget:
                continue
            gain = Fraction(0)
            mask2 = mask | 1 << u
            for atom in dists[u].atoms:
                done = elapsed + atom.size
                if done <= big_w:
                    gain += atom.prob * (atom.reward + memo[(mask2, u, done, travel2)])
            if gain > best:
                best = gain
                choice = (u, travel2)
        if choice is None:
            return None
        u, travel2 = choice
        mask2 = mask | 1 << u
        children = []
        for idx, atom in enumerate(dists[u].atoms):
            done = elapsed + atom.size
            if done > big_w:
                continue
            sub = rebuild(mask2, u, done, travel2, reach * atom.prob)
            if sub is not None:
                children.append((idx, sub))
        return PolicyNode(u, tuple(children), elapsed=elapsed, reach_prob=reach)

    root_mask = 1 << inst.root
    total = value(root_mask, inst.root, 0, 0)
    child = rebuild(root_mask, inst.root, 0, 0, Fraction(1))
    children = () if child is None else ((0, child),)
    tree = AdaptivePolicyTree(
        PolicyNode(inst.root, children, elapsed=0, reach_prob=Fraction(1))
    )
    return AdaptiveOptimum(total, tree)


def _elapsed_after(
    cache: dict[int, dict[int, Fraction]],
    inst: CorrKOInstance,
    mask: int,
    states: dict[int, Fraction],
    v: int,
) -> dict[int, Fraction]:
    """Elapsed-time distribution after also visiting v, memoized by vertex set.

    Valid because sizes are nonnegative: mass survives iff its final total
    is within W, independent of visiting order, so the set alone determines
    the distribution.
    """
    mask2 = mask | 1 << v
    hit = cache.get(mask2)
    if hit is not None:
        return hit
    big_w = inst.processing_budget
    nxt: dict[int, Fraction] = {}
    for t, pr in states.items():
        for atom in inst.dists[v].atoms:
            done = t + atom.size
            if done <= big_w:
                nxt[done] = nxt.get(done, Fraction(0)) + pr * atom.prob
    cache[mask2] = nxt
    return nxt


def opt_nonadaptive(
    inst: CorrKOInstance, caps: OracleBudgetCaps | None = None
) -> NonAdaptiveOptimum:
    """Optimal fixed sequence by branch and bound.

    Prunes on travel feasibility, on an admissible optimistic completion
    bound, and by Pareto dominance over (travel, collected reward) pairs
    per (visited set, last vertex); dominance is exact because the
    surviving elapsed-time distribution depends only on the visited set.
    """
    caps = caps or OracleBudgetCaps()
    caps.admit(inst)
    d = inst.metric.distances
    big_w = inst.processing_budget
    budget = inst.travel_budget
    n = inst.n
    root = inst.root

    start_at_zero = [start_reward(inst.dists[u], 0, big_w) for u in range(n)]
    elapsed_cache: dict[int, dict[int, Fraction]] = {}
    pareto: dict[tuple[int, int], list[tuple[int, Fraction]]] = {}
    explored = 0

    best_value = Fraction(0)
    best_seq = (root,)

    def consider(seq: list[int], val: Fraction) -> None:
        nonlocal best_value, best_seq
        if val > best_value:
            best_value = val
            best_seq = tuple(seq)

    def extend(
        seq: list[int],
        mask: int,
        last: int,
        travel: int,
        states: dict[int, Fraction],
        collected: Fraction,
    ) -> None:
        nonlocal explored
        explored += 1
        if explored > caps.max_states:
            raise OracleBudgetError(
                f"non-adaptive oracle exceeded max_states={caps.max_states}"
            )
        key = (mask, last)
        entries = pareto.setdefault(key, [])
        for g, r in entries:
            if g <= travel and r >= collected:
                return
        entries[:] = [(g, r) for g, r in entries if not (travel <= g and collected >= r)]
        entries.append((travel, collected))

        consider(seq, collected)
        if not states:
            return
        alive = sum(states.values(), Fraction(0))
        t_min = min(states)
        potential = Fraction(0)
        for u in range(n):
            if not mask >> u & 1 and travel + d[last][u] <= budget:
                potential += start_reward(inst.dists[u], t_min, big_w)
        if collected + alive * potential <= best_value:
            return
        for u in range(n):
            if mask >> u & 1:
                continue
            travel2 = travel + d[last][u]
            if travel2 > budget:
                continue
            gain = Fraction(0)
            for t, pr in states.items():
                gain += pr * start_reward(inst.dists[u], t, big_w)
            nxt = _elapsed_after(elapsed_cache, inst, mask, states, u)
            seq.append(u)
            extend(seq, mask | 1 << u, u, travel2, nxt, collected + gain)
            seq.pop()

    root_states = {0: Fraction(1)}
    elapsed_cache[1 << root] = root_states
    extend([root], 1 << root, root, 0, root_states, Fraction(0))
    return NonAdaptiveOptimum(best_value, NonAdaptivePolicy(best_seq))


def adaptivity_gap(
    inst: CorrKOInstance, caps: OracleBudgetCaps | None = None
) -> Fraction | float:
    """opt_adaptive / opt_nonadaptive; math.inf when only adaptivity earns."""
    ada = opt_adaptive(inst, caps)
    non = opt_nonadaptive(inst, caps)
    if non.value == 0:
        if ada.value == 0:
            return Fraction(1)
        return math.inf
    return ada.value / non.value


def opt_fixed_order(inst: CorrKOInstance, order: tuple[int, ...]) -> Fraction:
    """Best adaptive attempt/skip strategy along a fixed vertex order.

    The visitor walks ``order`` left to right, deciding for each vertex
    (knowing all realized sizes so far) whether to visit it or skip it
    forever.  Travel is charged between consecutive visited vertices.
    This dominates every subsequence of ``order`` played non-adaptively.
    """
    for v in order:
        if not 0 <= v < inst.n or v == inst.root:
            raise ValueError("order must list non-root vertices")
    if len(set(order)) != len(order):
        raise ValueError("order must not repeat vertices")
    d = inst.metric.distances
    big_w = inst.processing_budget
    budget = inst.travel_budget
    memo: dict[tuple[int, int, int, int], Fraction] = {}

    def value(i: int, last: int, elapsed: int, travel: int) -> Fraction:
        if i == len(order):
            return Fraction(0)
        key = (i, last, elapsed, travel)
        cached = memo.get(key)
        if cached is not None:
            return cached
        best = value(i + 1, last, elapsed, travel)
        u = order[i]
        travel2 = travel + d[last][u]
        if travel2 <= budget:
            gain = Fraction(0)
            for atom in inst.dists[u].atoms:
                done = elapsed + atom.size
                if done <= big_w:
                    gain += atom.prob * (atom.reward + value(i + 1, u, done, travel2))
            if gain > best:
                best = gain
        memo[key] = best
        return best

    return value(0, inst.root, 0, 0)


def opt_nonadaptive_restricted(inst) -> NonAdaptiveOptimum:
    """Non-adaptive optimum over level-decreasing sequences.

    Only valid for instances from the adaptivity-gap generator, whose
    vertices carry tree levels.  Sequences start at the dummy root and
    every later vertex has a strictly smaller level than its predecessor;
    travel pruning applies as usual.  The result lower-bounds the true
    non-adaptive optimum and is reported as restricted.
    """
    levels = getattr(inst, "levels", None)
    if levels is None:
        raise ValueError(
            "restricted search needs an adaptivity-gap instance with level annotations"
        )
    d = inst.metric.distances
    big_w = inst.processing_budget
    budget = inst.travel_budget
    n = inst.n
    root = inst.root

    best_value = Fraction(0)
    best_seq = (root,)

    def extend(
        seq: list[int],
        last: int,
        level: int,
        travel: int,
        states: dict[int, Fraction],
        collected: Fraction,
    ) -> None:
        nonlocal best_value, best_seq
        if collected > best_value:
            best_value = collected
            best_seq = tuple(seq)
        if not states:
            return
        row = d[last]
        for u in range(n):
            if u == root or levels[u] >= level:
                continue
            travel2 = travel + row[u]
            if travel2 > budget:
                continue
            gain = Fraction(0)
            nxt: dict[int, Fraction] = {}
            for t, pr in states.items():
                for atom in inst.dists[u].atoms:
                    done = t + atom.size
                    if done <= big_w:
                        if atom.reward:
                            gain += pr * atom.prob * atom.reward
                        nxt[done] = nxt.get(done, Fraction(0)) + pr * atom.prob
            seq.append(u)
            extend(seq, u, levels[u], travel2, nxt, collected + gain)
            seq.pop()

    extend([root], root, levels[root], 0, {0: Fraction(1)}, Fraction(0))
    return NonAdaptiveOptimum(best_value, NonAdaptivePolicy(best_seq), restricted=True)


def opt_cancellation_bruteforce(
    inst: CorrKOInstance, caps: OracleBudgetCaps | None = None
) -> CancellationOptimum:
    """Best (sequence, deterministic threshold vector) pair by enumeration.

    Deterministic per-vertex thresholds suffice among fixed vectors: the
    expected reward is linear in each vertex's threshold distribution, so
    some extreme point attains the maximum.  Thresholds range over
    {1..W, never}; sequences over travel-feasible distinct-vertex routes
    from the root.
    """
    caps = caps or OracleBudgetCaps()
    caps.admit(inst)
    d = inst.metric.distances
    budget = inst.travel_budget
    n = inst.n
    root = inst.root
    options: list[int | None] = [None] + list(range(1, inst.processing_budget + 1))

    sequences: list[tuple[int, ...]] = []

    def routes(seq: list[int], mask: int, last: int, travel: int) -> None:
        sequences.append(tuple(seq))
        for u in range(n):
            if mask >> u & 1:
                continue
            travel2 = travel + d[last][u]
            if travel2 > budget:
                continue
            seq.append(u)
            routes(seq, mask | 1 << u, u, travel2)
            seq.pop()

    routes([root], 1 << root, root, 0)

    best: CancellationOptimum | None = None
    for seq in sequences:
        k = len(seq) - 1

        def vectors(i: int, chosen: list[int | None]) -> None:
            nonlocal best
            if i == k:
                thresholds = (((None, Fraction(1)),),) + tuple(
                    ((t, Fraction(1)),) for t in chosen
                )
                policy = CancellationPolicy(seq, thresholds)
                val = eval_cancellation_exact(inst, policy)
                if best is None or val > best.value:
                    best = CancellationOptimum(val, policy)
                return
            for t in options:
                chosen.append(t)
                vectors(i + 1, chosen)
                chosen.pop()

        vectors(0, [])
    assert best is not None
    return best
