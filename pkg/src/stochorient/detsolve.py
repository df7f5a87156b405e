"""Deterministic routing solvers.

Exact subset-DP solvers for orienteering, knapsack orienteering, and
orienteering with knapsack deadlines; the Lagrangian reduction that turns any
plain-orienteering solver into a knapsack-orienteering solver; and the two
approximation algorithms for deadline instances (deadline bucketing and the
portal decomposition).

All solvers return a :class:`SolveResult` and re-verify the returned path with
an independent feasibility checker before handing it back.  Rewards are exact
``Fraction`` values throughout; distances, knapsack-deadline weights, and
deadlines are integers.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Callable, NamedTuple, Optional

from .core import FiniteMetric

DP_VERTEX_CAP = 14
ENUMERATION_VERTEX_CAP = 6
ENUMERATION_RUN_CAP = 50_000


class SolverCapError(ValueError):
    """Instance exceeds a documented solver size cap."""


class PathInfeasibleError(ValueError):
    """A path violates the constraints of the instance it was built for."""


class PortalStructureError(ValueError):
    """A portal structure is internally inconsistent with its instance."""


class SolveResult(NamedTuple):
    reward: Fraction
    path: tuple[int, ...]


@dataclass(frozen=True)
class KnapOrientInstance:
    """Rooted or point-to-point orienteering, optionally with a knapsack.

    ``end is None`` means rooted.  ``knap_weights``/``knap_budget`` are either
    both present or both ``None`` (plain orienteering).  Terminal vertices may
    carry nonzero knapsack weight; solvers normalize them to zero against a
    reduced budget, which leaves the feasible set unchanged.
    """

    metric: FiniteMetric
    start: int
    end: Optional[int]
    length_budget: int
    rewards: tuple[Fraction, ...]
    knap_weights: Optional[tuple[Fraction, ...]] = None
    knap_budget: Optional[Fraction] = None

    def __post_init__(self) -> None:
        n = self.metric.n
        if not 0 <= self.start < n:
            raise ValueError(f"start {self.start} out of range for {n} vertices")
        if self.end is not None:
            if not 0 <= self.end < n:
                raise ValueError(f"end {self.end} out of range for {n} vertices")
            if self.end == self.start:
                raise ValueError("point-to-point instance needs distinct endpoints")
        if not isinstance(self.length_budget, int) or self.length_budget < 0:
            raise ValueError("length budget must be a nonnegative integer")
        object.__setattr__(self, "rewards", _fraction_row("reward", self.rewards, n))
        if (self.knap_weights is None) != (self.knap_budget is None):
            raise ValueError("knapsack weights and budget must be given together")
        if self.knap_weights is not None:
            object.__setattr__(
                self, "knap_weights", _fraction_row("knapsack weight", self.knap_weights, n)
            )
            budget = Fraction(self.knap_budget)
            if budget < 0:
                raise ValueError("knapsack budget must be nonnegative")
            object.__setattr__(self, "knap_budget", budget)

    @property
    def terminals(self) -> tuple[int, ...]:
        if self.end is None:
            return (self.start,)
        return (self.start, self.end)


@dataclass(frozen=True)
class OrientKDInstance:
    """Rooted orienteering with knapsack deadlines.

    A rooted path is feasible when its length fits the travel budget and, for
    every vertex on it, the total weight of the path up to and including that
    vertex is at most the vertex's deadline.  Weights and deadlines are
    integers by scaling.
    """

    metric: FiniteMetric
    root: int
    length_budget: int
    rewards: tuple[Fraction, ...]
    weights: tuple[int, ...]
    deadlines: tuple[int, ...]

    def __post_init__(self) -> None:
        n = self.metric.n
        if not 0 <= self.root < n:
            raise ValueError(f"root {self.root} out of range for {n} vertices")
        if not isinstance(self.length_budget, int) or self.length_budget < 0:
            raise ValueError("length budget must be a nonnegative integer")
        object.__setattr__(self, "rewards", _fraction_row("reward", self.rewards, n))
        _int_row("weight", self.weights, n)
        _int_row("deadline", self.deadlines, n)
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "deadlines", tuple(self.deadlines))


@dataclass(frozen=True)
class KnapOKDInstance:
    """Orienteering with knapsack deadlines plus one extra plain knapsack.

    The extra knapsack charges ``extra_weights[v]`` for every visited vertex
    against ``extra_budget``; after scaling the budget is 1 and the extra
    weights lie in [0, 1].
    """

    metric: FiniteMetric
    root: int
    length_budget: int
    rewards: tuple[Fraction, ...]
    weights: tuple[int, ...]
    deadlines: tuple[int, ...]
    extra_weights: tuple[Fraction, ...]
    extra_budget: Fraction

    def __post_init__(self) -> None:
        n = self.metric.n
        if not 0 <= self.root < n:
            raise ValueError(f"root {self.root} out of range for {n} vertices")
        if not isinstance(self.length_budget, int) or self.length_budget < 0:
            raise ValueError("length budget must be a nonnegative integer")
        object.__setattr__(self, "rewards", _fraction_row("reward", self.rewards, n))
        _int_row("weight", self.weights, n)
        _int_row("deadline", self.deadlines, n)
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "deadlines", tuple(self.deadlines))
        object.__setattr__(
            self, "extra_weights", _fraction_row("extra weight", self.extra_weights, n)
        )
        budget = Fraction(self.extra_budget)
        if budget < 0:
            raise ValueError("extra knapsack budget must be nonnegative")
        object.__setattr__(self, "extra_budget", budget)

    def without_extra(self) -> OrientKDInstance:
        return OrientKDInstance(
            metric=self.metric,
            root=self.root,
            length_budget=self.length_budget,
            rewards=self.rewards,
            weights=self.weights,
            deadlines=self.deadlines,
        )


@dataclass(frozen=True)
class OKDPortalStructure:
    """Portal decomposition of a deadline-feasible path.

    ``portals`` starts with the root and then lists one portal per weight
    scale, ending at the path's endpoint.  Per segment j it records a midpoint
    ``m_j``, a regret exponent ``gamma_j``, the segment length bound
    ``D_j = 2^gamma_j - 1 + d(u_{j-1}, m_j) + d(m_j, u_j)``, the interior
    weight cap ``W_j = ceil(zeta^j) - 1``, and the prefix-weight floor
    ``lb_j = sum_{h<j} max(zeta^h, wt(u_h))``.  ``witnesses`` keeps the
    half-and-jump subpaths used to certify the structure.
    """

    zeta: Fraction
    portals: tuple[int, ...]
    midpoints: tuple[int, ...]
    regret_exponents: tuple[int, ...]
    length_bounds: tuple[int, ...]
    size_caps: tuple[int, ...]
    prefix_floors: tuple[Fraction, ...]
    witnesses: tuple[tuple[int, ...], ...] = ()

    def __post_init__(self) -> None:
        zeta = Fraction(self.zeta)
        if zeta < 1 or zeta * zeta > zeta + 1:
            raise ValueError("zeta must satisfy 1 <= zeta and zeta^2 <= zeta + 1")
        object.__setattr__(self, "zeta", zeta)
        if not self.portals:
            raise ValueError("portal list must at least contain the root")
        if len(set(self.portals)) != len(self.portals):
            raise ValueError("portal vertices must be distinct")
        segs = len(self.portals) - 1
        for name, row in (
            ("midpoints", self.midpoints),
            ("regret_exponents", self.regret_exponents),
            ("length_bounds", self.length_bounds),
            ("size_caps", self.size_caps),
            ("prefix_floors", self.prefix_floors),
        ):
            if len(row) != segs:
                raise ValueError(f"{name} must have one entry per portal segment")
        if any(g < 0 for g in self.regret_exponents):
            raise ValueError("regret exponents must be nonnegative")
        object.__setattr__(
            self, "prefix_floors", tuple(Fraction(x) for x in self.prefix_floors)
        )

    @property
    def segment_count(self) -> int:
        return len(self.portals) - 1


def _fraction_row(name: str, row, n: int) -> tuple[Fraction, ...]:
    values = tuple(Fraction(x) for x in row)
    if len(values) != n:
        raise ValueError(f"expected {n} {name} entries, got {len(values)}")
    if any(x < 0 for x in values):
        raise ValueError(f"{name} entries must be nonnegative")
    return values


def _int_row(name: str, row, n: int) -> None:
    if len(row) != n:
        raise ValueError(f"expected {n} {name} entries, got {len(row)}")
    for x in row:
        if not isinstance(x, int) or isinstance(x, bool) or x < 0:
            raise ValueError(f"{name} entries must be nonnegative integers")


def walk_length(metric: FiniteMetric, path: tuple[int, ...]) -> int:
    return sum(metric.distance(a, b) for a, b in zip(path, path[1:]))


# ---------------------------------------------------------------------------
# Feasibility checkers.  Solvers call these on their own output; tests call
# them directly.  Each returns a list of human-readable violations.


def knap_orient_violations(inst: KnapOrientInstance, path: tuple[int, ...]) -> list[str]:
    out: list[str] = []
    if not path:
        return ["path is empty"]
    if any(not 0 <= v < inst.metric.n for v in path):
        return ["path contains out-of-range vertices"]
    if len(set(path)) != len(path):
        out.append("path repeats a vertex")
    if path[0] != inst.start:
        out.append(f"path starts at {path[0]}, expected {inst.start}")
    if inst.end is not None and path[-1] != inst.end:
        out.append(f"path ends at {path[-1]}, expected {inst.end}")
    length = walk_length(inst.metric, path)
    if length > inst.length_budget:
        out.append(f"length {length} exceeds budget {inst.length_budget}")
    if inst.knap_weights is not None:
        load = sum(inst.knap_weights[v] for v in path)
        if load > inst.knap_budget:
            out.append(f"knapsack load {load} exceeds budget {inst.knap_budget}")
    return out


def orientkd_violations(inst: OrientKDInstance, path: tuple[int, ...]) -> list[str]:
    out: list[str] = []
    if not path:
        return ["path is empty"]
    if any(not 0 <= v < inst.metric.n for v in path):
        return ["path contains out-of-range vertices"]
    if len(set(path)) != len(path):
        out.append("path repeats a vertex")
    if path[0] != inst.root:
        out.append(f"path starts at {path[0]}, expected root {inst.root}")
    length = walk_length(inst.metric, path)
    if length > inst.length_budget:
        out.append(f"length {length} exceeds budget {inst.length_budget}")
    load = 0
    for v in path:
        load += inst.weights[v]
        if load > inst.deadlines[v]:
            out.append(f"vertex {v} completes at weight {load} past deadline {inst.deadlines[v]}")
    return out


def knap_okd_violations(inst: KnapOKDInstance, path: tuple[int, ...]) -> list[str]:
    out = orientkd_violations(inst.without_extra(), path)
    if not path or any(not 0 <= v < inst.metric.n for v in path):
        return out
    extra = sum(inst.extra_weights[v] for v in path)
    if extra > inst.extra_budget:
        out.append(f"extra knapsack load {extra} exceeds budget {inst.extra_budget}")
    return out


def _assert_feasible(violations: list[str], context: str) -> None:
    if violations:
        raise PathInfeasibleError(f"{context}: " + "; ".join(violations))


# ---------------------------------------------------------------------------
# Subset DP core.


@lru_cache(maxsize=128)
def _reach_table(
    metric: FiniteMetric, start: int, allowed_mask: int
) -> dict[int, dict[int, int]]:
    """Minimum path length per (visited mask, last vertex), rooted at start.

    The table is budget-free so it can be shared across reward reweightings;
    callers filter by length afterwards.  Only masks that are subsets of
    ``allowed_mask`` appear.
    """

    dp: dict[int, dict[int, int]] = {1 << start: {start: 0}}
    vertices = [v for v in range(metric.n) if allowed_mask >> v & 1]
    for mask in range(1 << metric.n):
        if mask & ~allowed_mask or mask not in dp:
            continue
        row = dp[mask]
        for v in vertices:
            bit = 1 << v
            if mask & bit:
                continue
            best = min(length + metric.distance(last, v) for last, length in row.items())
            cell = dp.setdefault(mask | bit, {})
            if v not in cell or best < cell[v]:
                cell[v] = best
    return dp


def _mask_vertices(mask: int) -> tuple[int, ...]:
    out = []
    v = 0
    while mask:
        if mask & 1:
            out.append(v)
        mask >>= 1
        v += 1
    return tuple(out)


def _mask_sums(values: tuple, masks) -> dict[int, Fraction]:
    """Sum of ``values`` over each mask's vertices, shared-prefix memoized."""

    out: dict[int, Fraction] = {0: Fraction(0)}

    def total(mask: int):
        acc = out.get(mask)
        if acc is not None:
            return acc
        low = mask & -mask
        acc = total(mask ^ low) + values[low.bit_length() - 1]
        out[mask] = acc
        return acc

    for mask in masks:
        total(mask)
    return out


def _resolve_allowed(inst: KnapOrientInstance, allowed) -> int:
    n = inst.metric.n
    if allowed is None:
        mask = (1 << n) - 1
    else:
        mask = 0
        for v in allowed:
            if not 0 <= v < n:
                raise ValueError(f"allowed vertex {v} out of range")
            mask |= 1 << v
    for t in inst.terminals:
        mask |= 1 << t
    return mask


def _reconstruct(metric: FiniteMetric, start: int, mask: int, last: int,
                 dp: dict[int, dict[int, int]]) -> tuple[int, ...]:
    path = [last]
    while mask != 1 << start:
        row = dp[mask ^ (1 << last)]
        target = dp[mask][last]
        pred = min(u for u, length in row.items() if length + metric.distance(u, last) == target)
        mask ^= 1 << last
        last = pred
        path.append(last)
    path.reverse()
    return tuple(path)


def _check_cap(inst) -> None:
    if inst.metric.n > DP_VERTEX_CAP:
        raise SolverCapError(
            f"subset DP supports at most {DP_VERTEX_CAP} vertices, got {inst.metric.n}"
        )


def _best_state(candidates) -> tuple:
    """Pick max reward; break ties by smallest sorted vertex set, then last."""

    best = None
    best_key = None
    for reward, mask, last, extra in candidates:
        key = (_mask_vertices(mask), last)
        if best is None or reward > best[0] or (reward == best[0] and key < best_key):
            best = (reward, mask, last, extra)
            best_key = key
    return best


def orienteering_exact(inst: KnapOrientInstance, allowed=None) -> SolveResult:
    """Maximum-reward rooted or point-to-point path within the travel budget.

    Held-Karp DP over (visited subset, last vertex) storing the minimum path
    length; the end vertex of a point-to-point instance is forced last.  Ties
    favour the lexicographically smallest vertex set, then the smallest last
    vertex.  Ignores any knapsack fields on the instance.
    """

    _check_cap(inst)
    metric = inst.metric
    allowed_mask = _resolve_allowed(inst, allowed)
    if inst.end is None:
        dp = _reach_table(metric, inst.start, allowed_mask)
        states = [
            (mask, last, length)
            for mask, row in dp.items()
            for last, length in row.items()
            if length <= inst.length_budget
        ]
    else:
        end_bit = 1 << inst.end
        dp = _reach_table(metric, inst.start, allowed_mask & ~end_bit)
        states = [
            (mask | end_bit, last, length + metric.distance(last, inst.end))
            for mask, row in dp.items()
            for last, length in row.items()
            if length + metric.distance(last, inst.end) <= inst.length_budget
        ]
        if not states:
            raise PathInfeasibleError(
                "even the direct start-end hop exceeds the length budget"
            )
    rewards = _mask_sums(inst.rewards, (mask for mask, _, _ in states))
    best = _best_state((rewards[mask], mask, last, None) for mask, last, _ in states)
    reward, mask, last, _ = best
    if inst.end is None:
        path = _reconstruct(metric, inst.start, mask, last, dp)
    else:
        path = _reconstruct(metric, inst.start, mask ^ (1 << inst.end), last, dp) + (inst.end,)
    plain = KnapOrientInstance(metric, inst.start, inst.end, inst.length_budget, inst.rewards)
    _assert_feasible(knap_orient_violations(plain, path), "orienteering_exact output")
    return SolveResult(reward, path)


def _normalized_knap(inst: KnapOrientInstance) -> tuple[tuple[Fraction, ...], Fraction]:
    """Zero terminal weights against a reduced budget; reject if impossible."""

    weights = list(inst.knap_weights)
    budget = inst.knap_budget
    for t in inst.terminals:
        budget -= weights[t]
        weights[t] = Fraction(0)
    if budget < 0:
        raise PathInfeasibleError(
            "terminal knapsack weights alone exceed the knapsack budget"
        )
    return tuple(weights), budget


def knap_orient_exact(inst: KnapOrientInstance, allowed=None) -> SolveResult:
    """Maximum-reward path whose vertex set also fits the knapsack budget."""

    _check_cap(inst)
    if inst.knap_weights is None:
        raise ValueError("knap_orient_exact needs knapsack weights and budget")
    weights, budget = _normalized_knap(inst)
    metric = inst.metric
    allowed_mask = _resolve_allowed(inst, allowed)
    if inst.end is None:
        dp = _reach_table(metric, inst.start, allowed_mask)
        states = [
            (mask, last, length)
            for mask, row in dp.items()
            for last, length in row.items()
            if length <= inst.length_budget
        ]
    else:
        end_bit = 1 << inst.end
        dp = _reach_table(metric, inst.start, allowed_mask & ~end_bit)
        states = [
            (mask | end_bit, last, length + metric.distance(last, inst.end))
            for mask, row in dp.items()
            for last, length in row.items()
            if length + metric.distance(last, inst.end) <= inst.length_budget
        ]
        if not states:
            raise PathInfeasibleError(
                "even the direct start-end hop exceeds the length budget"
            )
    loads = _mask_sums(weights, (mask for mask, _, _ in states))
    states = [s for s in states if loads[s[0]] <= budget]
    if not states:
        raise PathInfeasibleError("no knapsack-feasible path exists")
    rewards = _mask_sums(inst.rewards, (mask for mask, _, _ in states))
    best = _best_state((rewards[mask], mask, last, None) for mask, last, _ in states)
    reward, mask, last, _ = best
    if inst.end is None:
        path = _reconstruct(metric, inst.start, mask, last, dp)
    else:
        path = _reconstruct(metric, inst.start, mask ^ (1 << inst.end), last, dp) + (inst.end,)
    _assert_feasible(knap_orient_violations(inst, path), "knap_orient_exact output")
    return SolveResult(reward, path)


# ---------------------------------------------------------------------------
# Lagrangian reduction: plain-orienteering solver -> knapsack orienteering.


def _trivial_path(inst: KnapOrientInstance) -> tuple[int, ...]:
    return inst.terminals


def _single_vertex_path(inst: KnapOrientInstance, v: int) -> tuple[int, ...]:
    if v in inst.terminals:
        return _trivial_path(inst)
    if inst.end is None:
        return (inst.start, v)
    return (inst.start, v, inst.end)


def lagrangian_subpath_candidates(
    tau: tuple[int, ...],
    inst: KnapOrientInstance,
    reduced_rewards: tuple[Fraction, ...],
    lam: Fraction,
    lower_bound: Fraction,
    weights: tuple[Fraction, ...],
    budget: Fraction,
) -> list[tuple[int, ...]]:
    """Trim a base-solver path into knapsack-feasible candidate subpaths.

    ``weights``/``budget`` are the terminal-normalized knapsack data.  Step 1:
    if some vertex of ``tau`` fits the knapsack alone and has original reward
    at least ``lam * lower_bound / 2``, a path holding just that vertex (plus
    the terminals) already secures the target reward.  Step 2: otherwise keep
    the positive-reduced-reward vertices of ``tau`` in order and take the
    maximal prefix whose original reward stays at most ``lam * lower_bound``.
    """

    terminals = inst.terminals
    threshold = lam * lower_bound / 2
    heavy = [v for v in tau if weights[v] <= budget and inst.rewards[v] >= threshold]
    if heavy:
        pick = max(heavy, key=lambda v: (inst.rewards[v], -v))
        return [_single_vertex_path(inst, pick)]
    kept = [v for v in tau if v in terminals or reduced_rewards[v] > 0]
    total = sum(inst.rewards[t] for t in terminals)
    prefix: list[int] = []
    if total <= lam * lower_bound:
        for v in kept:
            if v in terminals:
                continue
            if total + inst.rewards[v] > lam * lower_bound:
                break
            total += inst.rewards[v]
            prefix.append(v)
    if inst.end is None:
        return [(inst.start, *prefix)]
    return [(inst.start, *prefix, inst.end)]


def lagrangian_knap_reduce(
    base_solver: Callable[..., SolveResult],
    alpha: Fraction,
    inst: KnapOrientInstance,
    eps: Fraction = Fraction(1, 100),
) -> SolveResult:
    """Solve knapsack orienteering through a plain-orienteering solver.

    ``base_solver(instance, allowed=...)`` must be an alpha-approximation for
    the knapsack-free problem.  For each guess LB on a geometric grid over
    [max reward, total reward], vertex rewards are reduced by
    ``lam * LB / W * wt_v`` with ``lam = 2 / (alpha + 2)``, the base solver is
    run, and the returned path is trimmed to a knapsack-feasible subpath.  The
    best candidate across all guesses is returned; its reward is at least
    ``OPT / ((alpha + 2) (1 + eps))``.
    """

    if inst.knap_weights is None:
        raise ValueError("lagrangian_knap_reduce needs knapsack weights and budget")
    alpha = Fraction(alpha)
    eps = Fraction(eps)
    if alpha < 1 or eps <= 0:
        raise ValueError("need alpha >= 1 and eps > 0")
    weights, budget = _normalized_knap(inst)
    n = inst.metric.n
    terminals = inst.terminals
    allowed = frozenset(
        v for v in range(n) if weights[v] <= budget or v in terminals
    )
    lam = 2 / (alpha + 2)

    best_path = _trivial_path(inst)
    best_reward = sum(inst.rewards[t] for t in terminals)
    _assert_feasible(knap_orient_violations(inst, best_path), "trivial path")

    peak = max((inst.rewards[v] for v in allowed), default=Fraction(0))
    if peak > 0:
        total = sum(inst.rewards[v] for v in allowed)
        grid = [peak]
        while grid[-1] * (1 + eps) <= total:
            grid.append(grid[-1] * (1 + eps))
        for lower_bound in reversed(grid):
            scale = lam * lower_bound / budget if budget > 0 else None
            reduced = tuple(
                max(Fraction(0), inst.rewards[v] - scale * weights[v])
                if scale is not None and v in allowed
                else (inst.rewards[v] if v in allowed else Fraction(0))
                for v in range(n)
            )
            base = KnapOrientInstance(
                inst.metric, inst.start, inst.end, inst.length_budget, reduced
            )
            tau = base_solver(base, allowed=allowed).path
            _assert_feasible(knap_orient_violations(base, tau), "base solver path")
            for cand in lagrangian_subpath_candidates(
                tau, inst, reduced, lam, lower_bound, weights, budget
            ):
                _assert_feasible(knap_orient_violations(inst, cand), "trimmed path")
                reward = sum(inst.rewards[v] for v in cand)
                if reward > best_reward:
                    best_reward, best_path = reward, cand
    return SolveResult(best_reward, best_path)


# ---------------------------------------------------------------------------
# Orienteering with knapsack deadlines: exact DP and approximations.


def orientkd_exact(inst: OrientKDInstance) -> SolveResult:
    """Exact deadline orienteering by subset DP.

    State (visited set S, last vertex v) holds the minimum length over
    deadline-feasible orderings of S ending at v; entering v requires
    ``wt(S + v) <= deadline(v)``, which is order-free, so reachability of a
    state certifies a feasible ordering.
    """

    _check_cap(inst)
    metric = inst.metric
    root = inst.root
    if inst.weights[root] > inst.deadlines[root]:
        raise PathInfeasibleError("root weight exceeds its own deadline")
    n = metric.n
    wt = inst.weights
    full = (1 << n) - 1
    loads: dict[int, int] = {0: 0}

    def load(mask: int) -> int:
        acc = loads.get(mask)
        if acc is None:
            low = mask & -mask
            acc = load(mask ^ low) + wt[low.bit_length() - 1]
            loads[mask] = acc
        return acc

    dp: dict[int, dict[int, int]] = {1 << root: {root: 0}}
    for mask in range(full + 1):
        if mask not in dp:
            continue
        row = dp[mask]
        for v in range(n):
            bit = 1 << v
            if mask & bit:
                continue
            if load(mask | bit) > inst.deadlines[v]:
                continue
            best = min(length + metric.distance(last, v) for last, length in row.items())
            cell = dp.setdefault(mask | bit, {})
            if v not in cell or best < cell[v]:
                cell[v] = best
    states = [
        (mask, last, length)
        for mask, row in dp.items()
        for last, length in row.items()
        if length <= inst.length_budget
    ]
    rewards = _mask_sums(inst.rewards, (mask for mask, _, _ in states))
    best = _best_state((rewards[mask], mask, last, None) for mask, last, _ in states)
    reward, mask, last, _ = best

    path = [last]
    while mask != 1 << root:
        row = dp[mask ^ (1 << last)]
        target = dp[mask][last]
        pred = min(
            u for u, length in row.items() if length + metric.distance(u, last) == target
        )
        mask ^= 1 << last
        last = pred
        path.append(last)
    path.reverse()
    result = tuple(path)
    _assert_feasible(orientkd_violations(inst, result), "orientkd_exact output")
    return SolveResult(reward, result)


def preprocess_orientkd(inst: OrientKDInstance) -> OrientKDInstance:
    """Normalize a deadline instance: zero root weight and reward.

    The root's weight is folded into every deadline; vertices that can no
    longer be visited (weight above the shifted deadline) keep their fields
    but lose their reward so downstream algorithms never chase them.
    """

    root = inst.root
    shift = inst.weights[root]
    if inst.deadlines[root] < shift:
        raise PathInfeasibleError("root weight exceeds its own deadline")
    deadlines = []
    for v in range(inst.metric.n):
        if v == root:
            deadlines.append(inst.deadlines[v] - shift)
        else:
            deadlines.append(max(inst.deadlines[v] - shift, 0))
    weights = tuple(0 if v == root else inst.weights[v] for v in range(inst.metric.n))
    # A vertex stays rewardable only if a path could still reach it in time:
    # its weight on top of the root's must fit under its original deadline.
    rewards = tuple(
        Fraction(0)
        if v == root or inst.deadlines[v] < shift + inst.weights[v]
        else inst.rewards[v]
        for v in range(inst.metric.n)
    )
    return OrientKDInstance(
        metric=inst.metric,
        root=root,
        length_budget=inst.length_budget,
        rewards=rewards,
        weights=weights,
        deadlines=tuple(deadlines),
    )


def deadline_buckets(inst: OrientKDInstance) -> dict[int, tuple[int, ...]]:
    """Group rewardable non-root vertices by deadline scale.

    Bucket -1 holds zero-deadline vertices; bucket j >= 0 holds vertices with
    ``deadline / min positive deadline`` in [2^j, 2^{j+1}).  Unvisitable or
    zero-reward vertices are skipped.
    """

    inst = preprocess_orientkd(inst)
    live = [
        v
        for v in range(inst.metric.n)
        if v != inst.root and inst.rewards[v] > 0 and inst.weights[v] <= inst.deadlines[v]
    ]
    buckets: dict[int, list[int]] = {}
    positive = [v for v in live if inst.deadlines[v] > 0]
    kd_min = min((inst.deadlines[v] for v in positive), default=0)
    for v in live:
        if inst.deadlines[v] == 0:
            buckets.setdefault(-1, []).append(v)
        else:
            j = (inst.deadlines[v] // kd_min).bit_length() - 1
            buckets.setdefault(j, []).append(v)
    return {j: tuple(sorted(vs)) for j, vs in sorted(buckets.items())}


def orientkd_bucketing(
    inst: OrientKDInstance,
    knap_solver: Callable[..., SolveResult] = knap_orient_exact,
) -> SolveResult:
    """Deadline orienteering via per-scale knapsack orienteering.

    Vertices are bucketed by deadline scale; bucket j is solved as knapsack
    orienteering with budget ``kd_min * 2^{j+1}`` (plain orienteering for the
    zero-deadline bucket), and each bucket path is split into at most three
    deadline-feasible rooted subpaths.  With an alpha-approximate
    ``knap_solver`` the best candidate collects at least
    ``OPT / (3 alpha (N + 2))`` reward, where N is the number of nonzero
    buckets minus one.
    """

    work = preprocess_orientkd(inst)
    root = work.root
    best = SolveResult(inst.rewards[root], (root,))
    _assert_feasible(orientkd_violations(inst, best.path), "root-only path")
    buckets = deadline_buckets(inst)
    positive = [v for vs in buckets.values() for v in vs if work.deadlines[v] > 0]
    kd_min = min((work.deadlines[v] for v in positive), default=0)

    for j, members in buckets.items():
        if j == -1:
            cap = Fraction(0)
        else:
            cap = Fraction(kd_min * (1 << (j + 1)))
        rewards = tuple(
            work.rewards[v] if v in members else Fraction(0) for v in range(work.metric.n)
        )
        sub = KnapOrientInstance(
            metric=work.metric,
            start=root,
            end=None,
            length_budget=work.length_budget,
            rewards=rewards,
            knap_weights=tuple(Fraction(w) for w in work.weights),
            knap_budget=cap,
        )
        allowed = frozenset(members) | {root}
        q = knap_solver(sub, allowed=allowed).path
        _assert_feasible(knap_orient_violations(sub, q), f"bucket {j} path")
        interior = [v for v in q if v != root]
        if j == -1:
            parts = [interior] if interior else []
        else:
            split = kd_min * (1 << j)
            head: list[int] = []
            load = 0
            rest = list(interior)
            while rest and load + work.weights[rest[0]] <= split:
                load += work.weights[rest[0]]
                head.append(rest.pop(0))
            parts = [p for p in (head, rest[:1], rest[1:]) if p]
        for part in parts:
            cand = (root, *part)
            _assert_feasible(orientkd_violations(work, cand), f"bucket {j} subpath")
            reward = sum(inst.rewards[v] for v in cand)
            if reward > best.reward:
                best = SolveResult(reward, cand)
    _assert_feasible(orientkd_violations(inst, best.path), "bucketing output")
    return best


def extract_okd_portals(
    opt_path: tuple[int, ...],
    inst: OrientKDInstance,
    zeta: Fraction = Fraction(3, 2),
) -> OKDPortalStructure:
    """Read a portal structure off a feasible deadline-orienteering path.

    Portal j is the first node after portal j-1 at which the accumulated
    weight reaches ``zeta^j``; the final path endpoint closes the list.  Each
    segment gets a reward midpoint, a regret exponent, and a half-and-jump
    witness subpath, and the six structure properties (segment length bound,
    total length, joint half reward for the witness tails plus the portal
    chain, interior size cap, concatenated feasibility, and prefix-weight
    floors along the source path) are verified before the structure is
    returned.
    """

    zeta = Fraction(zeta)
    _assert_feasible(orientkd_violations(inst, opt_path), "portal source path")
    if len(opt_path) == 1:
        return OKDPortalStructure(zeta, (inst.root,), (), (), (), (), ())

    metric = inst.metric
    wt = inst.weights
    portal_idx = [0]
    j = 0
    while True:
        acc = Fraction(0)
        found = None
        for i in range(portal_idx[-1] + 1, len(opt_path)):
            acc += wt[opt_path[i]]
            if acc >= zeta ** j:
                found = i
                break
        if found is None:
            break
        portal_idx.append(found)
        j += 1
    if portal_idx[-1] != len(opt_path) - 1:
        portal_idx.append(len(opt_path) - 1)

    def seg_walk(nodes: tuple[int, ...]) -> int:
        return walk_length(metric, nodes)

    midpoints: list[int] = []
    gammas: list[int] = []
    lengths: list[int] = []
    caps: list[int] = []
    floors: list[Fraction] = []
    witnesses: list[tuple[int, ...]] = []
    floor = Fraction(0)
    for s in range(1, len(portal_idx)):
        lo, hi = portal_idx[s - 1], portal_idx[s]
        seg = opt_path[lo : hi + 1]
        total = sum(inst.rewards[v] for v in seg)
        acc = Fraction(0)
        mid_pos = 0
        for pos, v in enumerate(seg):
            acc += inst.rewards[v]
            if 2 * acc >= total:
                mid_pos = pos
                break
        m = seg[mid_pos]
        first, second = seg[: mid_pos + 1], seg[mid_pos:]
        reg_first = seg_walk(first) - metric.distance(seg[0], m)
        reg_second = seg_walk(second) - metric.distance(m, seg[-1])
        regret = reg_first + reg_second
        gamma = (regret + 1).bit_length() - 1
        if reg_first <= reg_second:
            witness = first if m == seg[-1] else first + (seg[-1],)
        else:
            witness = second if m == seg[0] else (seg[0],) + second
        j = s - 1
        midpoints.append(m)
        gammas.append(gamma)
        lengths.append((1 << gamma) - 1 + metric.distance(seg[0], m) + metric.distance(m, seg[-1]))
        caps.append(math.ceil(zeta ** j) - 1)
        floors.append(floor)
        witnesses.append(witness)
        floor += max(zeta ** j, Fraction(wt[seg[-1]]))

    structure = OKDPortalStructure(
        zeta=zeta,
        portals=tuple(opt_path[i] for i in portal_idx),
        midpoints=tuple(midpoints),
        regret_exponents=tuple(gammas),
        length_bounds=tuple(lengths),
        size_caps=tuple(caps),
        prefix_floors=tuple(floors),
        witnesses=tuple(witnesses),
    )
    _verify_extracted(structure, opt_path, inst)
    return structure


def _verify_extracted(
    st: OKDPortalStructure, opt_path: tuple[int, ...], inst: OrientKDInstance
) -> None:
    metric = inst.metric
    for j, w in enumerate(st.witnesses):
        if walk_length(metric, w) > st.length_bounds[j]:
            raise PortalStructureError(f"segment {j} witness breaks its length bound")
    if sum(st.length_bounds) > inst.length_budget:
        raise PortalStructureError("total segment length bounds exceed the travel budget")
    opt_reward = sum(inst.rewards[v] for v in opt_path)
    # Each witness keeps at least half of its segment's reward, but the tail
    # sums below drop every segment's start vertex, so the root's reward and
    # any interior portal reward discarded with a kept half can only be
    # recovered by the portal chain.  The guarantee is therefore joint.
    tails = sum(sum(inst.rewards[v] for v in w[1:]) for w in st.witnesses)
    chain = sum(inst.rewards[v] for v in st.portals)
    if 2 * (tails + chain) < opt_reward:
        raise PortalStructureError(
            "witness tails and portal chain keep less than half the reward"
        )
    for j, w in enumerate(st.witnesses):
        interior = w[1:-1]
        if sum(inst.weights[v] for v in interior) > st.size_caps[j]:
            raise PortalStructureError(f"segment {j} interior weight exceeds its cap")
    concat: list[int] = list(st.witnesses[0]) if st.witnesses else [inst.root]
    for w in st.witnesses[1:]:
        concat.extend(w[1:])
    _assert_feasible(orientkd_violations(inst, tuple(concat)), "concatenated witness path")
    prefix = {}
    acc = 0
    for v in opt_path:
        acc += inst.weights[v]
        prefix[v] = acc
    for j, w in enumerate(st.witnesses):
        for v in w[1:]:
            if prefix[v] < st.prefix_floors[j] + inst.weights[v]:
                raise PortalStructureError(
                    f"vertex {v} in segment {j} sits below the prefix-weight floor"
                )


def _validate_structure(st: OKDPortalStructure, inst: OrientKDInstance) -> None:
    metric = inst.metric
    n = metric.n
    if any(not 0 <= u < n for u in st.portals) or any(
        not 0 <= m < n for m in st.midpoints
    ):
        raise PortalStructureError("portal structure names out-of-range vertices")
    if st.portals[0] != inst.root:
        raise PortalStructureError("portal list must start at the root")
    floor = Fraction(0)
    for j in range(st.segment_count):
        a, b = st.portals[j], st.portals[j + 1]
        m = st.midpoints[j]
        want = (1 << st.regret_exponents[j]) - 1 + metric.distance(a, m) + metric.distance(m, b)
        if st.length_bounds[j] != want:
            raise PortalStructureError(f"segment {j} length bound disagrees with its parts")
        if st.size_caps[j] != math.ceil(st.zeta ** j) - 1:
            raise PortalStructureError(f"segment {j} size cap disagrees with zeta^{j}")
        if st.prefix_floors[j] != floor:
            raise PortalStructureError(f"segment {j} prefix floor disagrees with the recurrence")
        floor += max(st.zeta ** j, Fraction(inst.weights[b]))
    if sum(st.length_bounds) > inst.length_budget:
        raise PortalStructureError("total segment length bounds exceed the travel budget")


def orientkd_portal_alg(
    inst: OrientKDInstance,
    portals: Optional[OKDPortalStructure] = None,
    p2p_knap_solver: Callable[..., SolveResult] = knap_orient_exact,
    enumerate_structures: bool = False,
) -> SolveResult:
    """Deadline orienteering through portal-to-portal knapsack orienteering.

    Given a portal structure, each consecutive portal pair is solved as a
    point-to-point knapsack-orienteering instance over the vertices whose
    deadline clears the segment's prefix-weight floor, with residual rewards
    so no vertex is counted twice.  The returned path is the best of: the
    three interleaved interior paths (segments j = l mod 3 for l in {0,1,2}),
    the bare portal chain, and the full concatenation when it happens to be
    deadline-feasible.  With an exact inner solver the reward is at least an
    eighth of the reward of the path behind the structure.

    ``enumerate_structures=True`` ignores ``portals`` and tries every
    structure with at most three segments (small instances only).
    """

    work = preprocess_orientkd(inst)
    if enumerate_structures:
        if work.metric.n > ENUMERATION_VERTEX_CAP:
            raise SolverCapError(
                f"structure enumeration supports at most {ENUMERATION_VERTEX_CAP} vertices"
            )
        best = SolveResult(inst.rewards[work.root], (work.root,))
        for st in _enumerate_structures(work):
            cand = _portal_core(work, inst, st, p2p_knap_solver, strict=False)
            if cand.reward > best.reward:
                best = cand
        _assert_feasible(orientkd_violations(inst, best.path), "portal output")
        return best
    if portals is None:
        raise ValueError("need a portal structure unless enumerate_structures is set")
    _validate_structure(portals, work)
    result = _portal_core(work, inst, portals, p2p_knap_solver, strict=True)
    _assert_feasible(orientkd_violations(inst, result.path), "portal output")
    return result


def _portal_core(
    work: OrientKDInstance,
    orig: OrientKDInstance,
    st: OKDPortalStructure,
    p2p_knap_solver: Callable[..., SolveResult],
    strict: bool,
) -> SolveResult:
    metric = work.metric
    root = work.root
    n = metric.n
    segments: list[tuple[int, ...]] = []
    used: set[int] = set()
    for j in range(st.segment_count):
        a, b = st.portals[j], st.portals[j + 1]
        eligible = sorted(
            v
            for v in range(n)
            if v not in used
            and v not in (a, b)
            and work.rewards[v] > 0
            and work.deadlines[v] >= st.prefix_floors[j] + work.weights[v]
        )
        rewards = tuple(
            work.rewards[v] if v in eligible else Fraction(0) for v in range(n)
        )
        weights = tuple(
            Fraction(0) if v in (a, b) else Fraction(work.weights[v]) for v in range(n)
        )
        sub = KnapOrientInstance(
            metric=metric,
            start=a,
            end=b,
            length_budget=st.length_bounds[j],
            rewards=rewards,
            knap_weights=weights,
            knap_budget=Fraction(st.size_caps[j]),
        )
        q = p2p_knap_solver(sub, allowed=frozenset(eligible) | {a, b}).path
        _assert_feasible(knap_orient_violations(sub, q), f"portal segment {j}")
        segments.append(q)
        used.update(q)

    candidates: list[tuple[int, ...]] = []
    for offset in range(3):
        seq = [root]
        for j in range(offset, st.segment_count, 3):
            seq.extend(segments[j][1:-1])
        candidates.append(tuple(seq))
    # The interleaved paths are feasible for any formula-consistent structure;
    # the portal chain is guaranteed only for structures read off a real path,
    # so in enumeration mode it is filtered rather than asserted.  The full
    # concatenation is a bonus candidate kept only when it happens to be
    # deadline-feasible.
    mandatory = len(candidates)
    if strict:
        candidates.append(st.portals)
        mandatory += 1
    elif not orientkd_violations(work, st.portals):
        candidates.append(st.portals)
    full: list[int] = [root]
    for q in segments:
        full.extend(q[1:] if full[-1] == q[0] else q)
    full_t = tuple(full)
    if len(set(full_t)) == len(full_t) and not orientkd_violations(work, full_t):
        candidates.append(full_t)

    best = SolveResult(orig.rewards[root], (root,))
    for pos, cand in enumerate(candidates):
        violations = orientkd_violations(work, cand)
        if violations:
            if pos < mandatory:
                raise PathInfeasibleError(
                    "portal candidate infeasible: " + "; ".join(violations)
                )
            continue
        reward = sum(orig.rewards[v] for v in cand)
        if reward > best.reward:
            best = SolveResult(reward, cand)
    return best


def _enumerate_structures(work: OrientKDInstance):
    """All portal structures with at most three segments, deduplicated.

    For a fixed portal list only the distinct segment length bounds matter,
    so midpoint/exponent pairs are collapsed to one representative per bound
    and combinations are pruned against the travel budget.
    """

    metric = work.metric
    n = metric.n
    budget = work.length_budget
    others = [v for v in range(n) if v != work.root]
    max_gamma = (budget + 1).bit_length() - 1
    runs = 0

    def bound_options(a: int, b: int) -> list[tuple[int, int, int]]:
        seen: dict[int, tuple[int, int]] = {}
        for m in range(n):
            base = metric.distance(a, m) + metric.distance(m, b)
            for gamma in range(max_gamma + 1):
                d = (1 << gamma) - 1 + base
                if d <= budget and (d not in seen or (gamma, m) < seen[d]):
                    seen[d] = (gamma, m)
        return sorted((d, gm[0], gm[1]) for d, gm in seen.items())

    for k in range(1, 4):
        for us in itertools.permutations(others, k):
            portals = (work.root, *us)
            options = [bound_options(portals[j], portals[j + 1]) for j in range(k)]

            def walk(j: int, picked: list[tuple[int, int, int]], spent: int):
                nonlocal runs
                if j == k:
                    runs += 1
                    if runs > ENUMERATION_RUN_CAP:
                        raise SolverCapError("structure enumeration exceeded its run cap")
                    floor = Fraction(0)
                    floors = []
                    for h in range(k):
                        floors.append(floor)
                        floor += max(
                            Fraction(3, 2) ** h, Fraction(work.weights[portals[h + 1]])
                        )
                    yield OKDPortalStructure(
                        zeta=Fraction(3, 2),
                        portals=portals,
                        midpoints=tuple(p[2] for p in picked),
                        regret_exponents=tuple(p[1] for p in picked),
                        length_bounds=tuple(p[0] for p in picked),
                        size_caps=tuple(
                            math.ceil(Fraction(3, 2) ** h) - 1 for h in range(k)
                        ),
                        prefix_floors=tuple(floors),
                    )
                    return
                for d, gamma, m in options[j]:
                    if spent + d > budget:
                        break
                    yield from walk(j + 1, picked + [(d, gamma, m)], spent + d)

            yield from walk(0, [], 0)


def knap_okd_exact(inst: KnapOKDInstance) -> SolveResult:
    """Exact solver for deadline orienteering with an extra knapsack.

    The fractional extra weights rule out a subset DP, so this is a pruned
    depth-first search over vertex sequences; intended for small instances.
    """

    if inst.metric.n > 8:
        raise SolverCapError("knap_okd_exact supports at most 8 vertices")
    metric = inst.metric
    root = inst.root
    n = metric.n
    if inst.weights[root] > inst.deadlines[root]:
        raise PathInfeasibleError("root weight exceeds its own deadline")
    if inst.extra_weights[root] > inst.extra_budget:
        raise PathInfeasibleError("root extra weight exceeds the extra budget")
    order = range(n)

    best = SolveResult(inst.rewards[root], (root,))

    def dfs(path: list[int], length: int, load: int, extra: Fraction, reward: Fraction):
        nonlocal best
        remaining = sum(inst.rewards[v] for v in order if v not in path)
        if reward + remaining <= best.reward:
            return
        last = path[-1]
        for v in order:
            if v in path:
                continue
            step = length + metric.distance(last, v)
            new_load = load + inst.weights[v]
            new_extra = extra + inst.extra_weights[v]
            if (
                step > inst.length_budget
                or new_load > inst.deadlines[v]
                or new_extra > inst.extra_budget
            ):
                continue
            path.append(v)
            new_reward = reward + inst.rewards[v]
            if new_reward > best.reward:
                best = SolveResult(new_reward, tuple(path))
            dfs(path, step, new_load, new_extra, new_reward)
            path.pop()

    dfs([root], 0, inst.weights[root], inst.extra_weights[root], inst.rewards[root])
    _assert_feasible(knap_okd_violations(inst, best.path), "knap_okd_exact output")
    return best
