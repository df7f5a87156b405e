"""End-to-end algorithms for correlated knapsack orienteering.

This module assembles the deterministic solvers (``detsolve``) and the
relaxations (``lp``) into approximation algorithms for stochastic
instances, in four layers:

* a window reduction: for each scale j the instance collapses to a
  deterministic knapsack-orienteering problem whose rewards are the
  start-by-(2^j - 1) collectable rewards and whose weights are scale-j
  truncated mean sizes.  ``poly_logW`` solves every window, thins the best
  path, and loses only an O(log W) factor.
* a structural certificate: ``extract_structure`` cuts an adaptive tree
  into a single high-reward root path, splits it into scale buckets at the
  first nodes crossing each start-time threshold, places portals by a
  greedy truncated-mean split, and shortcuts each portal pair around a
  reward midpoint.  Every claimed property of the result is re-checked as
  an exact rational inequality before it is returned.
* a configuration relaxation over the portal pairs (``solve_config_lp``)
  and its randomized rounding (``csko_round``), which keeps a constant
  fraction of the certificate's reward while the travel and size budgets
  hold with high probability.
* reward-split reductions: the three-way difficult decomposition, the
  two-point canonical form and its deadline-orienteering equivalent, the
  weighted-Bernoulli pipeline, and the cancellation pipeline built on the
  per-vertex processing chains of ``lp.build_ckoclp``.

Randomized steps take explicit seeds and consume the generator in a fixed
documented order, so runs are reproducible.  Thinning steps are evaluated
exactly by subset enumeration when the path is short (the supported desk
scale) and fall back to seeded sampling beyond that.
"""

from __future__ import annotations

import itertools
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .core import (
    Atom,
    CorrKOInstance,
    JointDistribution,
    TruncatedStats,
    log2_ceil,
    split_rewards,
    start_reward,
)
from .detsolve import (
    KnapOKDInstance,
    KnapOrientInstance,
    PathInfeasibleError,
    PortalStructureError,
    SolverCapError,
    knap_orient_exact,
    lagrangian_knap_reduce,
    orienteering_exact,
)
from .lp import (
    CHECK_TOL,
    FEAS_TOL,
    LPRow,
    LinearProgram,
    _size_profile,
    round_kolp,
    simplex_solve,
    solve_ckoclp,
    solve_kolp,
)
from .policy import (
    AdaptivePolicyTree,
    CancellationPolicy,
    NonAdaptivePolicy,
    eval_adaptive_exact,
    eval_cancellation_exact,
    eval_nonadaptive_exact,
)

# Enumeration guards.  Subset thinning switches to seeded sampling past
# SUBSET_ENUM_CAP non-root vertices; configuration and threshold searches
# abort (respectively degrade) past their caps instead of hanging.
SUBSET_ENUM_CAP = 16
CONFIG_VERTEX_CAP = 7
CONFIG_STEP_CAP = 200_000
SEARCH_VECTOR_CAP = 20_000


class TwoPointFormError(ValueError):
    """Raised when an instance is not in canonical two-point form."""


class BernoulliFormError(ValueError):
    """Raised when an instance is not in weighted-Bernoulli form."""


# ---------------------------------------------------------------------------
# Structural parameters.


@dataclass(frozen=True)
class StructuralParams:
    """Threshold constants shared by the structure machinery.

    ``L`` counts scales (the certificate uses start-time thresholds
    2^{j+1}-1 for j = 0..L), ``K`` bounds truncated-mean prefix loads, and
    ``N1`` bounds the portal count per scale.  ``K`` is rounded up to an
    integer through a ceiling inside its logarithm; every threshold built
    from it ((K+1)2^j, 5(K+1)2^j, 1/(10(K+1))) then stays exactly
    representable, and a larger K only slackens the bounds it appears in.
    At W = 1 the inner logarithm degenerates, so the formula is evaluated
    with the scale count clamped to at least one.
    """

    processing_budget: int
    L: int
    K: int
    N1: int

    @staticmethod
    def from_budget(processing_budget: int) -> "StructuralParams":
        if processing_budget < 1:
            raise ValueError("processing budget must be >= 1")
        scales = log2_ceil(processing_budget)
        slack = 3 * log2_ceil(6 * max(scales, 1)) + 12
        return StructuralParams(processing_budget, scales, slack, 2 * (slack + 1))


# ---------------------------------------------------------------------------
# Window reduction and the O(log W) algorithm.


def window_instance(
    inst: CorrKOInstance, j: int, stats: Optional[TruncatedStats] = None
) -> KnapOrientInstance:
    """Deterministic knapsack-orienteering window at scale j.

    Rewards are the start-by-(2^j - 1) collectable rewards, knapsack
    weights the scale-j truncated means, and the knapsack budget 2^{j+1}.
    The best window's relaxation value is within a factor L+1 of the
    adaptive optimum, which is what makes the scale sweep sound.
    """
    if j < 0:
        raise ValueError("scale index must be nonnegative")
    stats = stats if stats is not None else TruncatedStats.from_instance(inst)
    start = (1 << j) - 1
    rewards = tuple(
        start_reward(d, start, inst.processing_budget) for d in inst.dists
    )
    weights = tuple(stats.mean(v, j) for v in range(inst.n))
    return KnapOrientInstance(
        inst.metric,
        inst.root,
        None,
        inst.travel_budget,
        rewards,
        weights,
        Fraction(2 << j),
    )


def _thinned_outcomes(
    inst: CorrKOInstance, base_path: tuple[int, ...], keep_prob: Fraction
) -> tuple[Fraction, NonAdaptivePolicy, Fraction]:
    """Exact expectation and best realization of subset thinning.

    Every non-root vertex of ``base_path`` is retained independently with
    ``keep_prob``; all 2^(len-1) outcomes are evaluated exactly.  Returns
    (expected value, best policy, best value).
    """
    root = base_path[0]
    rest = base_path[1:]
    keep = Fraction(keep_prob)
    expected = Fraction(0)
    best_policy = NonAdaptivePolicy((root,))
    best_value = eval_nonadaptive_exact(inst, best_policy)
    for mask in range(1 << len(rest)):
        seq = (root,) + tuple(v for i, v in enumerate(rest) if mask >> i & 1)
        policy = NonAdaptivePolicy(seq)
        value = eval_nonadaptive_exact(inst, policy)
        kept = bin(mask).count("1")
        expected += keep**kept * (1 - keep) ** (len(rest) - kept) * value
        if value > best_value:
            best_value, best_policy = value, policy
    return expected, best_policy, best_value


def _thinned_sample(
    inst: CorrKOInstance,
    base_path: tuple[int, ...],
    keep_prob: Fraction,
    rng: random.Random,
) -> tuple[NonAdaptivePolicy, Fraction]:
    seq = (base_path[0],) + tuple(
        v for v in base_path[1:] if rng.random() < float(keep_prob)
    )
    policy = NonAdaptivePolicy(seq)
    return policy, eval_nonadaptive_exact(inst, policy)


@dataclass(frozen=True)
class PolyLogWResult:
    """Outcome of the scale sweep.

    ``value`` is the exact value of ``policy`` on the instance;
    ``expected_value`` the thinned-policy expectation at the chosen window
    (exact when ``exact_expectation``).  ``window_values`` holds the
    per-scale selection metric and ``window_lp_values`` the relaxation
    objectives when the lp solver produced them.
    """

    policy: NonAdaptivePolicy
    value: Fraction
    expected_value: Fraction
    best_window: int
    window_values: tuple[Fraction, ...]
    window_lp_values: tuple[Optional[float], ...]
    base_path: tuple[int, ...]
    mode: str
    solver: str
    exact_expectation: bool


def poly_logW(
    inst: CorrKOInstance,
    *,
    mode: str = "derandomize",
    solver: str = "lp",
    seed: Optional[int] = None,
    subset_cap: int = SUBSET_ENUM_CAP,
    samples: int = 512,
) -> PolyLogWResult:
    """Solve every scale window, thin the path, return the best scale.

    For each j in 0..L the window instance is solved (relaxation plus
    constant-factor rounding, or the exact solver), then every non-root
    path vertex is kept independently with probability 1/4.  The thinned
    policy's expectation at the best window is at least a 1/(40(L+1))
    fraction of the adaptive optimum: the best window's relaxation keeps a
    1/(L+1) fraction, rounding keeps 1/5 of that, and thinning delivers
    every retained vertex a start no later than 2^j - 1 with probability
    at least 1/8.

    ``mode="derandomize"`` returns the best thinning outcome;
    ``mode="randomized"`` returns one seeded sample.  Past ``subset_cap``
    non-root vertices the expectation falls back to seeded sampling and
    ``exact_expectation`` is cleared.
    """
    if mode not in ("derandomize", "randomized"):
        raise ValueError(f"unknown mode {mode!r}")
    if solver not in ("lp", "exact"):
        raise ValueError(f"unknown solver {solver!r}")
    rng = random.Random(seed)
    stats = TruncatedStats.from_instance(inst)
    scales = log2_ceil(inst.processing_budget)
    keep = Fraction(1, 4)
    windows = []
    for j in range(scales + 1):
        wi = window_instance(inst, j, stats)
        lp_value: Optional[float] = None
        if inst.n < 2:
            base = (inst.root,)
        elif solver == "lp":
            try:
                relax = solve_kolp(wi)
                lp_value = relax.objective
                base = round_kolp(wi, relax).path
            except PathInfeasibleError:
                base = (inst.root,)
        else:
            base = knap_orient_exact(wi).path
        if len(base) - 1 <= subset_cap:
            expected, best_policy, best_value = _thinned_outcomes(inst, base, keep)
            exact = True
        else:
            draws = [_thinned_sample(inst, base, keep, rng) for _ in range(samples)]
            expected = sum((v for _, v in draws), Fraction(0)) / len(draws)
            best_policy, best_value = max(draws, key=lambda item: item[1])
            exact = False
        windows.append((expected, best_policy, best_value, base, lp_value, exact))
    best_j = max(range(scales + 1), key=lambda j: windows[j][0])
    expected, best_policy, best_value, base, _, exact = windows[best_j]
    if mode == "derandomize":
        policy, value = best_policy, best_value
    else:
        policy, value = _thinned_sample(inst, base, keep, rng)
    return PolyLogWResult(
        policy,
        value,
        expected,
        best_j,
        tuple(w[0] for w in windows),
        tuple(w[4] for w in windows),
        base,
        mode,
        solver,
        exact,
    )


# ---------------------------------------------------------------------------
# Structure extraction.


@dataclass(frozen=True)
class PortalPair:
    """One consecutive portal pair inside a scale bucket.

    All indices are positions on the certificate path.  ``kept`` is the
    surgered subpath actually retained for this pair: the reward-heavier
    half around ``midpoint``, closed by the pair's end portal; its walk
    length is at most ``length_bound``.
    """

    start: int
    end: int
    bucket: int
    midpoint: int
    exponent: int
    length_bound: int
    kept: tuple[int, ...]


@dataclass(frozen=True)
class PortalStructure:
    """Certificate path with scale portals and surgery data.

    ``path`` lists vertices and ``start_times`` the processing time at
    which each was reached in the source tree; ``phis[j]`` is the position
    of the first node whose start time reaches 2^{j+1} - 1 (the last entry
    is the leaf).  ``buckets[j]`` lists the scale-j portal positions and
    ``pairs`` the flattened consecutive portal pairs.  ``certified``
    structures come from an adaptive tree and also satisfy the
    optimum-relative reward properties: ``path_reward`` is at least half
    of ``opt_value``, and when ``reward_checked`` (no single vertex holds
    more than a quarter of the optimum at start time zero), the bucket
    rewards retain a quarter and the surgered pairs an eighth.
    """

    params: StructuralParams
    path: tuple[int, ...]
    start_times: tuple[int, ...]
    phis: tuple[int, ...]
    buckets: tuple[tuple[int, ...], ...]
    pairs: tuple[PortalPair, ...]
    opt_value: Fraction
    path_reward: Fraction
    reward_checked: bool
    certified: bool = True

    @property
    def k(self) -> int:
        return len(self.phis) - 1


def _greedy_portals(
    path: tuple[int, ...],
    first: int,
    last: int,
    j: int,
    stats: TruncatedStats,
    params: StructuralParams,
) -> tuple[int, ...]:
    """Greedy scale-j split of positions [first..last) plus the endpoints.

    Segments close at the first node pushing the cumulative scale-j mean
    to 2^j, so a closed segment minus its last node stays strictly below
    2^j and any two consecutive portals bracket at most that much mass.
    """
    cap = 1 << j
    portals = []
    acc = Fraction(0)
    seg_start: Optional[int] = None
    for pos in range(first, last):
        if seg_start is None:
            seg_start = pos
        acc += stats.mean(path[pos], j)
        if acc >= cap:
            portals.append(seg_start)
            portals.append(pos)
            seg_start = None
            acc = Fraction(0)
    if seg_start is not None:
        portals.append(seg_start)
    portals.append(last)
    ordered = tuple(sorted(set(portals)))
    if len(ordered) > params.N1:
        raise PortalStructureError(
            f"(portal-count) scale {j} produced {len(ordered)} portals, "
            f"above the bound {params.N1}"
        )
    return ordered


def _pair_surgery(
    inst: CorrKOInstance,
    path: tuple[int, ...],
    a: int,
    b: int,
    j: int,
) -> PortalPair:
    """Midpoint surgery for the portal pair at positions (a, b), scale j.

    The midpoint is the first position where the prefix of start-by-
    (2^j - 1) rewards reaches half the pair total.  Whichever half has the
    smaller regret (walk length minus the direct jump) is kept and the
    other is bridged; the regret exponent rounds the kept half's slack
    down to a power of two minus one.
    """
    metric = inst.metric
    horizon = inst.processing_budget
    start = (1 << j) - 1
    rewards = [
        start_reward(inst.dists[path[p]], start, horizon) for p in range(a, b)
    ]
    total = sum(rewards, Fraction(0))
    mid = a
    if total > 0:
        acc = Fraction(0)
        for offset, r in enumerate(rewards):
            acc += r
            if 2 * acc >= total:
                mid = a + offset
                break
    d_am = metric.distance(path[a], path[mid])
    d_mb = metric.distance(path[mid], path[b])
    first_leg = sum(metric.distance(path[p], path[p + 1]) for p in range(a, mid))
    second_leg = sum(metric.distance(path[p], path[p + 1]) for p in range(mid, b))
    regret = first_leg + second_leg - d_am - d_mb
    if regret < 0:
        raise PortalStructureError(
            f"(regret) pair at positions ({a},{b}) has negative regret {regret}"
        )
    exponent = (regret + 1).bit_length() - 1
    bound = (1 << exponent) - 1 + d_am + d_mb
    if first_leg - d_am <= second_leg - d_mb:
        kept = tuple(range(a, mid + 1)) + (b,)
    else:
        kept = (a,) + tuple(range(mid, b + 1))
    return PortalPair(a, b, j, mid, exponent, bound, kept)


def portal_violations(
    inst: CorrKOInstance,
    structure: PortalStructure,
    stats: Optional[TruncatedStats] = None,
) -> list[str]:
    """Exact rational re-check of every claimed structure property.

    Structural checks (portal tiling, kept-path lengths against their
    bounds, total length against the travel budget, per-pair and prefix
    truncated-mean loads) run always; the optimum-relative reward checks
    run only for certified structures, and the filtered ones only when
    ``reward_checked``.
    """
    stats = stats if stats is not None else TruncatedStats.from_instance(inst)
    metric = inst.metric
    horizon = inst.processing_budget
    slack = structure.params.K
    path = structure.path
    out: list[str] = []

    if not path or path[0] != inst.root:
        out.append(f"(path) certificate path must start at the root {inst.root}")
    if len(set(path)) != len(path):
        out.append("(path) certificate path repeats a vertex")
    if sum(
        metric.distance(path[p], path[p + 1]) for p in range(len(path) - 1)
    ) > inst.travel_budget:
        out.append("(path) certificate path length exceeds the travel budget")
    if structure.phis and structure.phis[-1] != len(path) - 1:
        out.append("(buckets) the last threshold position must be the leaf")
    if list(structure.phis) != sorted(structure.phis):
        out.append("(buckets) threshold positions must be nondecreasing")
    if structure.k > structure.params.L:
        out.append(
            f"(buckets) bucket count {structure.k} exceeds the scale count "
            f"{structure.params.L}"
        )

    previous = 0
    expected_pairs = []
    for j, (phi, portals) in enumerate(zip(structure.phis, structure.buckets)):
        if not portals:
            out.append(f"(buckets) scale {j} has no portals")
            continue
        if portals[0] != previous or portals[-1] != phi:
            out.append(
                f"(buckets) scale {j} portals must run from position "
                f"{previous} to {phi}"
            )
        if len(portals) > structure.params.N1:
            out.append(
                f"(portal-count) scale {j} has {len(portals)} portals, above "
                f"{structure.params.N1}"
            )
        expected_pairs.extend(
            (a, b, j) for a, b in zip(portals, portals[1:])
        )
        previous = phi
    if [(p.start, p.end, p.bucket) for p in structure.pairs] != expected_pairs:
        out.append("(buckets) pairs do not tile the bucketed portal lists")

    def reward_at(pos: int, scale: int) -> Fraction:
        return start_reward(inst.dists[path[pos]], (1 << scale) - 1, horizon)

    for pair in structure.pairs:
        kept = pair.kept
        if kept[0] != pair.start or kept[-1] != pair.end:
            out.append(
                f"(P1) pair ({pair.start},{pair.end}): kept subpath must run "
                f"portal to portal"
            )
            continue
        length = sum(
            metric.distance(path[p], path[q]) for p, q in zip(kept, kept[1:])
        )
        if length > pair.length_bound:
            out.append(
                f"(P1) pair ({pair.start},{pair.end}): kept length {length} "
                f"exceeds the bound {pair.length_bound}"
            )
        load = sum(
            (stats.mean(path[p], pair.bucket) for p in kept[:-1]), Fraction(0)
        )
        if load > 1 << pair.bucket:
            out.append(
                f"(P5) pair ({pair.start},{pair.end}): scale-{pair.bucket} "
                f"load {load} exceeds {1 << pair.bucket}"
            )

    total_bound = sum(pair.length_bound for pair in structure.pairs)
    if total_bound > inst.travel_budget:
        out.append(
            f"(P2) total length bound {total_bound} exceeds the travel "
            f"budget {inst.travel_budget}"
        )

    for j in range(structure.k + 1):
        cap = (slack + 1) * (1 << j)
        prefix = sum(
            (
                stats.mean(path[p], j)
                for pair in structure.pairs
                if pair.bucket <= j
                for p in pair.kept[:-1]
            ),
            Fraction(0),
        )
        if prefix > cap:
            out.append(
                f"(P4) scale {j}: kept prefix load {prefix} exceeds {cap}"
            )
        phi = structure.phis[j]
        along = sum((stats.mean(path[p], j) for p in range(phi)), Fraction(0))
        if along > cap:
            out.append(
                f"(prefix-size) scale {j}: path prefix load {along} exceeds {cap}"
            )

    if structure.certified:
        opt = structure.opt_value
        if 2 * structure.path_reward < opt:
            out.append(
                f"(half-reward) certificate path collects {structure.path_reward}, "
                f"below half of {opt}"
            )
        if structure.reward_checked:
            previous = 0
            bucket_reward = Fraction(0)
            for j, phi in enumerate(structure.phis):
                bucket_reward += sum(
                    (reward_at(p, j) for p in range(previous, phi)), Fraction(0)
                )
                previous = phi
            if 4 * bucket_reward < opt:
                out.append(
                    f"(bucket-reward) bucketed rewards {bucket_reward} fall "
                    f"below a quarter of {opt}"
                )
            kept_reward = sum(
                (
                    reward_at(p, pair.bucket)
                    for pair in structure.pairs
                    for p in pair.kept[:-1]
                ),
                Fraction(0),
            )
            if 8 * kept_reward < opt:
                out.append(
                    f"(P3) kept rewards {kept_reward} fall below an eighth of {opt}"
                )
    return out


def extract_structure(
    inst: CorrKOInstance, tree: AdaptivePolicyTree
) -> PortalStructure:
    """Cut an adaptive tree into a certified portal structure.

    The tree is truncated along each root-to-leaf trace at the first edge
    whose realized truncated-size prefix is still small while the
    truncated-mean prefix has blown past K times the scale (an
    exponentially unlikely event), or at a natural leaf.  The exits
    partition the probability mass, so the best exit trace collects at
    least half the tree's value; that trace becomes the certificate path.
    Thresholds, greedy portals, and midpoint surgery then follow, and
    every property is re-checked exactly; a failed check raises
    PortalStructureError naming the property, since it would falsify the
    structure theorem.
    """
    horizon = inst.processing_budget
    if horizon < 2:
        raise ValueError("structure extraction needs a processing budget >= 2")
    params = StructuralParams.from_budget(horizon)
    stats = TruncatedStats.from_instance(inst)
    opt = eval_adaptive_exact(inst, tree)
    scales = range(params.L + 1)
    slack = params.K

    best_trace: Optional[tuple[tuple[int, int], ...]] = None
    best_sum = Fraction(-1)

    def consider(trace: tuple[tuple[int, int], ...], value: Fraction) -> None:
        nonlocal best_trace, best_sum
        if value > best_sum:
            best_sum, best_trace = value, trace

    def visit(node, elapsed, xsums, musums, trace, collected) -> None:
        vertex = node.vertex
        collected = collected + start_reward(inst.dists[vertex], elapsed, horizon)
        trace = trace + ((vertex, elapsed),)
        mus = tuple(musums[j] + stats.mean(vertex, j) for j in scales)
        children = node.child_map()
        for idx, atom in enumerate(inst.dists[vertex].atoms):
            child = children.get(idx)
            if child is None:
                consider(trace, collected)
                continue
            xs = tuple(xsums[j] + min(atom.size, 1 << j) for j in scales)
            if any(xs[j] <= 2 << j and mus[j] > slack << j for j in scales):
                consider(trace, collected)
                continue
            visit(child, elapsed + atom.size, xs, mus, trace, collected)

    zero = tuple(0 for _ in scales)
    zero_mu = tuple(Fraction(0) for _ in scales)
    visit(tree.root, 0, zero, zero_mu, (), Fraction(0))
    if best_trace is None or 2 * best_sum < opt:
        raise PortalStructureError(
            f"(half-reward) best truncated trace collects {best_sum}, "
            f"below half of {opt}"
        )
    path = tuple(v for v, _ in best_trace)
    start_times = tuple(t for _, t in best_trace)

    phis: list[int] = []
    for j in scales:
        threshold = (2 << j) - 1
        pos = next(
            (p for p, t in enumerate(start_times) if t >= threshold), None
        )
        if pos is None:
            phis.append(len(path) - 1)
            break
        phis.append(pos)
    else:
        raise PortalStructureError(
            f"(scale-count) every scale up to {params.L} has a crossing node"
        )

    buckets: list[tuple[int, ...]] = []
    pairs: list[PortalPair] = []
    previous = 0
    for j, phi in enumerate(phis):
        portals = _greedy_portals(path, previous, phi, j, stats, params)
        buckets.append(portals)
        for a, b in zip(portals, portals[1:]):
            pairs.append(_pair_surgery(inst, path, a, b, j))
        previous = phi

    filtered = all(
        4 * start_reward(d, 0, horizon) <= opt for d in inst.dists
    )
    structure = PortalStructure(
        params,
        path,
        start_times,
        tuple(phis),
        tuple(buckets),
        tuple(pairs),
        opt,
        best_sum,
        filtered,
    )
    problems = portal_violations(inst, structure, stats)
    if problems:
        raise PortalStructureError(problems[0])
    return structure


def enumerate_portal_guesses(
    inst: CorrKOInstance,
    *,
    allow_enumeration: bool = False,
    max_guesses: int = 5000,
) -> tuple[PortalStructure, ...]:
    """Exhaustive portal guessing for tiny instances, gated by a flag.

    Guesses cover every simple rooted travel-feasible path, at most two
    scale buckets (so only instances whose true bucket count is 0 or 1 are
    fully covered), the finest portal split (every path position is a
    portal), and zero regret exponents.  Candidates compete through
    ``solve_config_lp``; when the true certificate path and threshold
    split appear among the guesses and no single vertex holds more than a
    quarter of the optimum at start time zero, the best relaxation value
    is at least a quarter of the optimum, because the direct columns alone
    recover the bucket rewards.  Gated because the guess count grows
    factorially.
    """
    if not allow_enumeration:
        raise ValueError(
            "portal enumeration is expensive; pass allow_enumeration=True"
        )
    if inst.n > 5:
        raise SolverCapError("portal enumeration supports at most 5 vertices")
    params = StructuralParams.from_budget(inst.processing_budget)
    metric = inst.metric
    guesses: list[PortalStructure] = []

    def build(positions: tuple[int, ...], phis: tuple[int, ...]) -> None:
        if len(guesses) >= max_guesses:
            raise SolverCapError(
                f"portal enumeration exceeded {max_guesses} guesses; "
                f"use a smaller instance"
            )
        buckets = []
        pairs = []
        previous = 0
        for j, phi in enumerate(phis):
            portals = tuple(range(previous, phi + 1)) if phi > previous else (phi,)
            buckets.append(portals)
            for a, b in zip(portals, portals[1:]):
                d_ab = metric.distance(positions[a], positions[b])
                pairs.append(PortalPair(a, b, j, a, 0, d_ab, (a, b)))
            previous = phi
        structure = PortalStructure(
            params,
            positions,
            (0,) * len(positions),
            phis,
            tuple(buckets),
            tuple(pairs),
            Fraction(0),
            Fraction(0),
            False,
            certified=False,
        )
        problems = portal_violations(inst, structure)
        if problems:
            raise PortalStructureError(problems[0])
        guesses.append(structure)

    def extend(seq: list[int], length: int) -> None:
        if len(seq) >= 2:
            positions = tuple(seq)
            last = len(positions) - 1
            build(positions, (last,))
            if params.L >= 1:
                for p0 in range(1, last + 1):
                    build(positions, (p0, last))
        for nxt in range(inst.n):
            if nxt in seq:
                continue
            step = length + metric.distance(seq[-1], nxt)
            if step > inst.travel_budget:
                continue
            seq.append(nxt)
            extend(seq, step)
            seq.pop()

    extend([inst.root], 0)
    return tuple(guesses)


# ---------------------------------------------------------------------------
# Configuration relaxation over portal pairs.


@dataclass(frozen=True)
class ConfigLPSolution:
    """Fractional configuration choice per portal pair.

    ``columns[i]`` lists the enumerated vertex paths for pair i (each from
    the pair's start portal to its end portal, within the pair's length
    bound and scale load cap), ``weights[i]`` the fractional choice over
    them, and ``column_rewards[i]`` each column's exact reward (summed over
    the column minus its final vertex at the pair's scale).
    """

    portals: PortalStructure
    columns: tuple[tuple[tuple[int, ...], ...], ...]
    weights: tuple[tuple[float, ...], ...]
    column_rewards: tuple[tuple[Fraction, ...], ...]
    objective: float
    program: Optional[LinearProgram] = None


def _enumerate_columns(
    inst: CorrKOInstance,
    stats: TruncatedStats,
    portals: PortalStructure,
    pair: PortalPair,
    counter: list[int],
    step_cap: int,
) -> tuple[tuple[int, ...], ...]:
    """All simple paths from the pair's start to its end within bounds.

    Depth-first search with admissible pruning: remaining straight-line
    distance to the end portal against the length bound, and the scale
    load (excluding the end portal) against 2^bucket.
    """
    path = portals.path
    origin, target = path[pair.start], path[pair.end]
    scale = pair.bucket
    load_cap = Fraction(1 << scale)
    metric = inst.metric
    found: list[tuple[int, ...]] = []

    def dfs(cur: int, length: int, load: Fraction, seq: list[int], seen: set[int]):
        counter[0] += 1
        if counter[0] > step_cap:
            raise SolverCapError(
                f"configuration enumeration exceeded {step_cap} steps; "
                f"use a smaller instance"
            )
        if cur == target:
            found.append(tuple(seq))
            return
        for nxt in range(inst.n):
            if nxt in seen:
                continue
            step = metric.distance(cur, nxt)
            tail = 0 if nxt == target else metric.distance(nxt, target)
            if length + step + tail > pair.length_bound:
                continue
            extra = Fraction(0) if nxt == target else stats.mean(nxt, scale)
            if load + extra > load_cap:
                continue
            seen.add(nxt)
            seq.append(nxt)
            dfs(nxt, length + step, load + extra, seq, seen)
            seq.pop()
            seen.discard(nxt)

    dfs(origin, 0, stats.mean(origin, scale), [origin], {origin})
    if not found:
        raise PortalStructureError(
            f"(columns) pair ({pair.start},{pair.end}) admits no "
            f"configuration, not even the direct hop"
        )
    return tuple(found)


def config_lp_violations(
    inst: CorrKOInstance,
    sol: ConfigLPSolution,
    stats: Optional[TruncatedStats] = None,
) -> list[str]:
    """Independent re-check of a configuration solution.

    Columns are re-validated exactly (endpoints, simplicity, length bound,
    scale load cap); the configuration, coverage, and prefix rows are
    re-evaluated in floats against CHECK_TOL.
    """
    stats = stats if stats is not None else TruncatedStats.from_instance(inst)
    metric = inst.metric
    portals = sol.portals
    path = portals.path
    out: list[str] = []
    if len(sol.columns) != len(portals.pairs) or len(sol.weights) != len(
        portals.pairs
    ):
        return ["solution does not list one block per portal pair"]

    coverage: dict[int, float] = {}
    prefix = [0.0] * (portals.k + 1)
    total = 0.0
    for i, pair in enumerate(portals.pairs):
        block_weight = 0.0
        for col, weight in zip(sol.columns[i], sol.weights[i]):
            if weight < -CHECK_TOL:
                out.append(f"pair {i}: negative column weight {weight}")
            if col[0] != path[pair.start] or col[-1] != path[pair.end]:
                out.append(f"pair {i}: column endpoints do not match the portals")
            if len(set(col)) != len(col):
                out.append(f"pair {i}: column repeats a vertex")
            length = sum(
                metric.distance(u, v) for u, v in zip(col, col[1:])
            )
            if length > pair.length_bound:
                out.append(
                    f"pair {i}: column length {length} exceeds "
                    f"{pair.length_bound}"
                )
            load = sum(
                (stats.mean(v, pair.bucket) for v in col[:-1]), Fraction(0)
            )
            if load > 1 << pair.bucket:
                out.append(
                    f"pair {i}: column load {load} exceeds {1 << pair.bucket}"
                )
            block_weight += weight
            for v in col[:-1]:
                coverage[v] = coverage.get(v, 0.0) + weight
            for j in range(pair.bucket, portals.k + 1):
                prefix[j] += weight * float(
                    sum((stats.mean(v, j) for v in col[:-1]), Fraction(0))
                )
            total += weight * float(
                sum(
                    (
                        start_reward(
                            inst.dists[v], (1 << pair.bucket) - 1,
                            inst.processing_budget,
                        )
                        for v in col[:-1]
                    ),
                    Fraction(0),
                )
            )
        if abs(block_weight - 1.0) > CHECK_TOL:
            out.append(f"pair {i}: configuration weights sum to {block_weight}")
    for v, mass in coverage.items():
        if mass > 1.0 + CHECK_TOL:
            out.append(f"vertex {v}: coverage {mass} exceeds 1")
    slack = portals.params.K
    for j in range(portals.k + 1):
        cap = float((slack + 1) * (1 << j))
        if prefix[j] > cap + CHECK_TOL * max(1.0, cap):
            out.append(f"scale {j}: prefix load {prefix[j]} exceeds {cap}")
    if abs(total - sol.objective) > CHECK_TOL * max(1.0, abs(total)):
        out.append(
            f"objective mismatch: recomputed {total}, stored {sol.objective}"
        )
    return out


def solve_config_lp(
    inst: CorrKOInstance,
    portals: PortalStructure,
    *,
    keep_program: bool = False,
    step_cap: int = CONFIG_STEP_CAP,
) -> ConfigLPSolution:
    """Exact optimum of the configuration relaxation over enumerated columns.

    One configuration row per portal pair (its weights sum to one), one
    coverage row per vertex appearing in any column, and one prefix row
    per scale capping the mixed truncated-mean load at (K+1)2^j.  The
    direct portal-to-portal hop is always a feasible column, so the
    program is feasible; weights are bounded by the configuration rows, so
    it is bounded.  Columns are enumerated by depth-first search with
    admissible pruning and a step cap.
    """
    if inst.n > CONFIG_VERTEX_CAP:
        raise SolverCapError(
            f"configuration enumeration supports at most {CONFIG_VERTEX_CAP} "
            f"vertices, got {inst.n}; use a smaller instance"
        )
    stats = TruncatedStats.from_instance(inst)
    if not portals.pairs:
        return ConfigLPSolution(portals, (), (), (), 0.0, None)

    counter = [0]
    columns = []
    column_rewards = []
    for pair in portals.pairs:
        cols = _enumerate_columns(inst, stats, portals, pair, counter, step_cap)
        columns.append(cols)
        column_rewards.append(
            tuple(
                sum(
                    (
                        start_reward(
                            inst.dists[v],
                            (1 << pair.bucket) - 1,
                            inst.processing_budget,
                        )
                        for v in col[:-1]
                    ),
                    Fraction(0),
                )
                for col in cols
            )
        )

    sizes = [len(cols) for cols in columns]
    offsets = [0]
    for size in sizes:
        offsets.append(offsets[-1] + size)
    nvar = offsets[-1]
    objective = [0.0] * nvar
    for i, rewards in enumerate(column_rewards):
        for c, reward in enumerate(rewards):
            objective[offsets[i] + c] = float(reward)

    rows: list[LPRow] = []
    for i in range(len(columns)):
        coeffs = [0.0] * nvar
        for c in range(sizes[i]):
            coeffs[offsets[i] + c] = 1.0
        rows.append(LPRow(tuple(coeffs), "=", 1.0))
    covered: dict[int, list[int]] = {}
    for i, cols in enumerate(columns):
        for c, col in enumerate(cols):
            for v in set(col[:-1]):
                covered.setdefault(v, []).append(offsets[i] + c)
    for v in sorted(covered):
        coeffs = [0.0] * nvar
        for idx in covered[v]:
            coeffs[idx] = 1.0
        rows.append(LPRow(tuple(coeffs), "<=", 1.0))
    slack = portals.params.K
    for j in range(portals.k + 1):
        coeffs = [0.0] * nvar
        nonzero = False
        for i, pair in enumerate(portals.pairs):
            if pair.bucket > j:
                continue
            for c, col in enumerate(columns[i]):
                load = float(
                    sum((stats.mean(v, j) for v in col[:-1]), Fraction(0))
                )
                if load:
                    coeffs[offsets[i] + c] = load
                    nonzero = True
        if nonzero:
            rows.append(
                LPRow(tuple(coeffs), "<=", float((slack + 1) * (1 << j)))
            )

    program = LinearProgram(True, tuple(objective), tuple(rows))
    outcome = simplex_solve(program)
    if outcome.status != "optimal":
        raise RuntimeError(
            f"configuration relaxation unexpectedly {outcome.status}"
        )
    weights = tuple(
        tuple(outcome.solution[offsets[i] + c] for c in range(sizes[i]))
        for i in range(len(columns))
    )
    sol = ConfigLPSolution(
        portals,
        tuple(columns),
        weights,
        tuple(column_rewards),
        outcome.objective,
        program if keep_program else None,
    )
    problems = config_lp_violations(inst, sol, stats)
    if problems:
        raise RuntimeError(
            "configuration solution failed its re-check: " + problems[0]
        )
    return sol


# ---------------------------------------------------------------------------
# Randomized rounding of the configuration relaxation.


@dataclass(frozen=True)
class CskoRoundDetails:
    """Trace of one rounding run.

    ``chosen[i]`` is the sampled column index for pair i (-1 for the
    direct hop), ``prefix_loads[j]`` the realized mixed scale-j load
    checked in the rejection step.  On rejection the policy degenerates to
    the root alone.
    """

    accepted: bool
    chosen: tuple[int, ...]
    concatenated: tuple[int, ...]
    deduped: tuple[int, ...]
    policy: NonAdaptivePolicy
    prefix_loads: tuple[Fraction, ...]


def csko_round(
    inst: CorrKOInstance,
    portals: PortalStructure,
    sol: ConfigLPSolution,
    seed: Optional[int] = None,
    *,
    return_details: bool = False,
):
    """Round a configuration solution to one non-adaptive policy.

    Steps, consuming the seeded generator in order: (1) per pair,
    independently pick column tau with probability weight/2, else the
    direct hop; (2) reject outright if any scale's realized mixed load
    exceeds 5(K+1)2^j, returning the root-only policy; (3) concatenate
    the picks and keep first occurrences; (4) keep each non-root vertex
    independently with probability 1/(10(K+1)).  Acceptance implies the
    realized prefix loads are within the step-2 caps by construction; the
    walk stays within the travel budget because the pair bounds tile it.
    """
    rng = random.Random(seed)
    slack = portals.params.K
    path = portals.path
    stats = TruncatedStats.from_instance(inst)

    chosen: list[int] = []
    segments: list[tuple[int, ...]] = []
    for i, pair in enumerate(portals.pairs):
        draw = rng.random()
        acc = 0.0
        pick = -1
        for c, weight in enumerate(sol.weights[i] if sol.weights else ()):
            acc += max(weight, 0.0) / 2.0
            if draw < acc:
                pick = c
                break
        chosen.append(pick)
        if pick >= 0:
            segments.append(sol.columns[i][pick])
        else:
            segments.append((path[pair.start], path[pair.end]))

    loads: list[Fraction] = []
    rejected = False
    for j in range(portals.k + 1):
        load = Fraction(0)
        for pair, segment in zip(portals.pairs, segments):
            if pair.bucket <= j:
                load += sum(
                    (stats.mean(v, j) for v in segment[:-1]), Fraction(0)
                )
        loads.append(load)
        if load > 5 * (slack + 1) * (1 << j):
            rejected = True
    if rejected:
        policy = NonAdaptivePolicy((inst.root,))
        details = CskoRoundDetails(
            False, tuple(chosen), (), (), policy, tuple(loads)
        )
        return (policy, details) if return_details else policy

    concatenated: list[int] = []
    for segment in segments:
        start = 1 if concatenated and concatenated[-1] == segment[0] else 0
        concatenated.extend(segment[start:])
    deduped: list[int] = []
    seen: set[int] = set()
    for v in concatenated:
        if v not in seen:
            seen.add(v)
            deduped.append(v)
    if not deduped:
        deduped = [inst.root]

    thin = 1.0 / (10 * (slack + 1))
    kept = [deduped[0]] + [v for v in deduped[1:] if rng.random() < thin]
    policy = NonAdaptivePolicy(tuple(kept))
    details = CskoRoundDetails(
        True,
        tuple(chosen),
        tuple(concatenated),
        tuple(deduped),
        policy,
        tuple(loads),
    )
    return (policy, details) if return_details else policy


# ---------------------------------------------------------------------------
# Difficult-instance decomposition.


@dataclass(frozen=True)
class BranchResult:
    """A branch policy with its exact value on the branch instance.

    ``expected_value`` is the thinned-policy expectation for branches that
    thin a base path, and simply the value otherwise.
    """

    policy: NonAdaptivePolicy
    value: Fraction
    expected_value: Fraction
    base_path: tuple[int, ...]


@dataclass(frozen=True)
class DifficultDecomposition:
    """Three-way reward split with mixing weights.

    ``truncated`` keeps rewards on small outcomes (size at most half the
    processing budget); ``large_light``/``large_heavy`` keep large-outcome
    rewards on vertices whose large-outcome probability is at most / above
    one half.  Rewards decompose pointwise, so the optimum is at most the
    sum of the three optima.  ``betas`` are the per-branch guarantee
    divisors; sampling branch i proportionally to betas[i] turns them into
    an overall sum(betas) guarantee.
    """

    truncated: CorrKOInstance
    large_light: CorrKOInstance
    large_heavy: CorrKOInstance
    heavy_vertices: tuple[int, ...]
    large_probs: tuple[Fraction, ...]
    betas: tuple[Fraction, Fraction, Fraction]


def decompose_difficult(
    inst: CorrKOInstance, *, alpha: Fraction = Fraction(1)
) -> DifficultDecomposition:
    """Split rewards into small, light-large, and heavy-large parts.

    ``alpha`` is the approximation factor of the solver used for the
    light-large branch; the middle mixing weight is 4 * alpha divided by a
    rational lower bound on 1 - e^{-1/2} (1967/5000), keeping all weights
    exact.
    """
    large, small = split_rewards(inst)
    half = inst.processing_budget // 2
    probs = []
    heavy = []
    for v in range(inst.n):
        mass = sum(
            (a.prob for a in inst.dists[v].atoms if a.size > half), Fraction(0)
        )
        probs.append(mass)
        if v != inst.root and 2 * mass > 1:
            heavy.append(v)
    heavy_set = set(heavy)

    def restrict(instance: CorrKOInstance, keep: set[int]) -> CorrKOInstance:
        dists = []
        for v in range(inst.n):
            d = instance.dists[v]
            if v in keep or v == inst.root:
                dists.append(d)
            else:
                dists.append(
                    JointDistribution(
                        tuple(
                            Atom(a.size, Fraction(0), a.prob) for a in d.atoms
                        )
                    )
                )
        return CorrKOInstance(
            instance.metric,
            instance.root,
            instance.travel_budget,
            instance.processing_budget,
            tuple(dists),
        )

    light_set = {
        v for v in range(inst.n) if v != inst.root and v not in heavy_set
    }
    beta_mid = 4 * Fraction(alpha) * Fraction(5000, 1967)
    return DifficultDecomposition(
        small,
        restrict(large, light_set),
        restrict(large, heavy_set),
        tuple(heavy),
        tuple(probs),
        (Fraction(80), beta_mid, Fraction(4)),
    )


def truncated_branch_policy(
    trunc: CorrKOInstance,
    *,
    solver: str = "lp",
    subset_cap: int = SUBSET_ENUM_CAP,
    seed: Optional[int] = None,
    samples: int = 512,
) -> BranchResult:
    """Small-outcome branch: expected-size knapsack orienteering, thinned.

    Builds the knapsack-orienteering instance with full expected rewards,
    expected budget-capped sizes as weights, and knapsack budget 2W (any
    policy's expected total processing is below that), rounds its
    relaxation, and keeps each non-root vertex with probability 1/8.  A
    retained vertex then starts by W/2 with probability at least 1/2, and
    a small job started by W/2 always pays, so the thinned expectation is
    at least a 1/80 fraction of the branch optimum.
    """
    horizon = trunc.processing_budget
    rewards = tuple(
        sum((a.prob * a.reward for a in d.atoms), Fraction(0))
        for d in trunc.dists
    )
    weights = tuple(
        sum(
            (a.prob * Fraction(min(a.size, horizon)) for a in d.atoms),
            Fraction(0),
        )
        for d in trunc.dists
    )
    ko = KnapOrientInstance(
        trunc.metric,
        trunc.root,
        None,
        trunc.travel_budget,
        rewards,
        weights,
        Fraction(2 * horizon),
    )
    if trunc.n < 2:
        base = (trunc.root,)
    elif solver == "lp":
        try:
            base = round_kolp(ko, solve_kolp(ko)).path
        except PathInfeasibleError:
            base = (trunc.root,)
    elif solver == "exact":
        base = knap_orient_exact(ko).path
    else:
        raise ValueError(f"unknown solver {solver!r}")
    keep = Fraction(1, 8)
    if len(base) - 1 <= subset_cap:
        expected, policy, value = _thinned_outcomes(trunc, base, keep)
    else:
        rng = random.Random(seed)
        draws = [_thinned_sample(trunc, base, keep, rng) for _ in range(samples)]
        expected = sum((v for _, v in draws), Fraction(0)) / len(draws)
        policy, value = max(draws, key=lambda item: item[1])
    return BranchResult(policy, value, expected, base)


def heavy_branch_policy(
    heavy: CorrKOInstance, *, vertices: Optional[Sequence[int]] = None
) -> BranchResult:
    """Heavy branch: the single reachable vertex of best immediate reward.

    When every rewarded vertex blocks the processing budget with
    probability above one half, an adaptive policy collects from at most
    four vertices in expectation before the budget is sunk, so the best
    single visit is a 1/4 approximation for this branch.
    """
    allowed = None if vertices is None else set(vertices)
    best_vertex: Optional[int] = None
    best = Fraction(0)
    for v in range(heavy.n):
        if v == heavy.root:
            continue
        if allowed is not None and v not in allowed:
            continue
        if heavy.metric.distance(heavy.root, v) > heavy.travel_budget:
            continue
        value = start_reward(heavy.dists[v], 0, heavy.processing_budget)
        if value > best:
            best, best_vertex = value, v
    sequence = (
        (heavy.root,) if best_vertex is None else (heavy.root, best_vertex)
    )
    policy = NonAdaptivePolicy(sequence)
    value = eval_nonadaptive_exact(heavy, policy)
    return BranchResult(policy, value, value, sequence)


def choose_branch(
    values: Sequence[Fraction],
    betas: Sequence[Fraction],
    *,
    mode: str = "best",
    seed: Optional[int] = None,
) -> int:
    """Pick a branch index: the argmax, or a beta-proportional sample.

    Sampling branch i with probability betas[i]/sum(betas) turns the
    per-branch guarantees value_i >= opt_i/betas[i] into an overall
    guarantee of opt/sum(betas); the argmax only improves on the mixture.
    """
    if len(values) != len(betas) or not values:
        raise ValueError("need one beta per branch value")
    if mode == "best":
        return max(range(len(values)), key=lambda i: values[i])
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")
    total = float(sum(betas))
    draw = random.Random(seed).random() * total
    acc = 0.0
    for i, beta in enumerate(betas):
        acc += float(beta)
        if draw < acc:
            return i
    return len(betas) - 1


# ---------------------------------------------------------------------------
# Two-point canonical form and deadline orienteering.


def _two_point_fields(
    dist: JointDistribution, horizon: int, v: int
) -> tuple[Fraction, Fraction, Optional[int], int]:
    """Decompose a canonical two-point job into (p, reward, big, small).

    A single-outcome job stands for probability zero (big size None); a
    two-outcome job must pair a rewarded big outcome above half the
    horizon (but within it) with an unrewarded small outcome at most half
    the horizon, with the big outcome's probability at most one half.
    """
    atoms = dist.atoms
    if len(atoms) == 1:
        atom = atoms[0]
        if atom.reward != 0:
            raise TwoPointFormError(
                f"vertex {v}: a single-outcome job must carry zero reward"
            )
        if 2 * atom.size > horizon:
            raise TwoPointFormError(
                f"vertex {v}: single outcome size {atom.size} exceeds half "
                f"the processing budget"
            )
        return Fraction(0), Fraction(0), None, atom.size
    if len(atoms) != 2:
        raise TwoPointFormError(
            f"vertex {v}: need at most two outcomes, got {len(atoms)}"
        )
    big, small = (
        (atoms[0], atoms[1])
        if atoms[0].size >= atoms[1].size
        else (atoms[1], atoms[0])
    )
    if 2 * big.size <= horizon:
        raise TwoPointFormError(
            f"vertex {v}: larger outcome size {big.size} must exceed half "
            f"the processing budget"
        )
    if big.size > horizon:
        raise TwoPointFormError(
            f"vertex {v}: larger outcome size {big.size} exceeds the "
            f"processing budget, so its reward could never be collected"
        )
    if 2 * small.size > horizon:
        raise TwoPointFormError(
            f"vertex {v}: smaller outcome size {small.size} exceeds half "
            f"the processing budget"
        )
    if small.reward != 0:
        raise TwoPointFormError(
            f"vertex {v}: the smaller outcome must carry zero reward"
        )
    if 2 * big.prob > 1:
        raise TwoPointFormError(
            f"vertex {v}: large-outcome probability {big.prob} exceeds 1/2"
        )
    return big.prob, big.reward, big.size, small.size


def tcsko_to_okd(inst: CorrKOInstance) -> KnapOKDInstance:
    """Map a canonical two-point instance to deadline orienteering.

    Vertex v earns p_v R_v exactly when every earlier vertex drew its
    small outcome and those small sizes leave room for v's big one; that
    is a deadline of W - big_v + small_v on the running small-size load,
    plus an extra knapsack charging p_v with budget 1 (collecting more
    than unit probability mass cannot pay off).  Probability-zero vertices
    keep their deterministic size as weight under a vacuous deadline W.
    """
    horizon = inst.processing_budget
    n = inst.n
    rewards = [Fraction(0)] * n
    weights = [0] * n
    deadlines = [0] * n
    extra = [Fraction(0)] * n
    for v in range(n):
        if v == inst.root:
            continue
        prob, reward, big, small = _two_point_fields(
            inst.dists[v], horizon, v
        )
        weights[v] = small
        if prob == 0:
            deadlines[v] = horizon
        else:
            rewards[v] = prob * reward
            deadlines[v] = horizon - big + small
            extra[v] = prob
    return KnapOKDInstance(
        inst.metric,
        inst.root,
        inst.travel_budget,
        tuple(rewards),
        tuple(weights),
        tuple(deadlines),
        tuple(extra),
        Fraction(1),
    )


def okd_to_tcsko(
    inst: KnapOKDInstance, processing_budget: Optional[int] = None
) -> CorrKOInstance:
    """Inverse map from deadline orienteering to two-point form.

    Without an explicit budget, W = 1 + 2 * max deadline, which always
    admits the canonical encoding; an explicit budget must be large enough
    for every vertex, otherwise the offending vertex is reported.
    Zero-extra-weight vertices become deterministic jobs (their deadline
    carries no information and is normalized to W by the forward map).
    """
    if inst.extra_budget != 1:
        raise TwoPointFormError(
            f"extra knapsack budget must be 1, got {inst.extra_budget}"
        )
    root = inst.root
    if (
        inst.rewards[root] != 0
        or inst.weights[root] != 0
        or inst.extra_weights[root] != 0
    ):
        raise TwoPointFormError(
            "root must carry zero reward, weight, and extra weight"
        )
    horizon = (
        processing_budget
        if processing_budget is not None
        else 1 + 2 * max(inst.deadlines)
    )
    if horizon < 1:
        raise TwoPointFormError("processing budget must be >= 1")
    dists = []
    for v in range(inst.metric.n):
        if v == root:
            dists.append(JointDistribution.point())
            continue
        prob = inst.extra_weights[v]
        weight = inst.weights[v]
        deadline = inst.deadlines[v]
        if 2 * prob > 1:
            raise TwoPointFormError(
                f"vertex {v}: extra weight {prob} exceeds 1/2"
            )
        if prob == 0:
            if inst.rewards[v] != 0:
                raise TwoPointFormError(
                    f"vertex {v}: zero extra weight with positive reward "
                    f"has no two-point preimage"
                )
            if 2 * weight > horizon:
                raise TwoPointFormError(
                    f"vertex {v}: weight {weight} exceeds half the "
                    f"processing budget {horizon}"
                )
            dists.append(JointDistribution.point(weight))
            continue
        if weight > deadline:
            raise TwoPointFormError(
                f"vertex {v}: weight {weight} exceeds its own deadline "
                f"{deadline}, so the vertex could never be visited"
            )
        big = horizon - deadline + weight
        if 2 * big <= horizon or big > horizon or 2 * weight > horizon:
            raise TwoPointFormError(
                f"vertex {v}: processing budget {horizon} cannot represent "
                f"deadline {deadline} with weight {weight} in canonical form"
            )
        dists.append(
            JointDistribution(
                (
                    Atom(big, inst.rewards[v] / prob, prob),
                    Atom(weight, Fraction(0), 1 - prob),
                )
            )
        )
    return CorrKOInstance(
        inst.metric, root, inst.length_budget, horizon, tuple(dists)
    )


def two_point_path_value(
    inst: CorrKOInstance, sequence: Sequence[int]
) -> Fraction:
    """Closed-form value of a fixed order on a two-point instance.

    Vertex v pays p_v R_v exactly when every earlier vertex drew its small
    outcome (a big draw earlier sinks the budget past any later big
    outcome) and the small sizes leave room for v's big size.  Matches the
    exact evaluator on every sequence; travel feasibility is the caller's
    concern.
    """
    horizon = inst.processing_budget
    seq = tuple(sequence)
    if not seq or seq[0] != inst.root:
        raise ValueError(f"sequence must start at the root {inst.root}")
    if len(set(seq)) != len(seq):
        raise ValueError("sequence must not repeat vertices")
    survival = Fraction(1)
    small_load = 0
    total = Fraction(0)
    for v in seq[1:]:
        prob, reward, big, small = _two_point_fields(
            inst.dists[v], horizon, v
        )
        if prob > 0 and small_load + big <= horizon:
            total += survival * prob * reward
        survival *= 1 - prob
        small_load += small
    return total


# ---------------------------------------------------------------------------
# Weighted-Bernoulli pipeline.


def _require_bernoulli(inst: CorrKOInstance) -> None:
    for v in range(inst.n):
        if v == inst.root:
            continue
        positive = {a.size for a in inst.dists[v].atoms if a.size > 0}
        if len(positive) > 1:
            raise BernoulliFormError(
                f"vertex {v} has {len(positive)} distinct positive sizes; "
                f"need at most one"
            )


def _two_point_canonical(
    inst: CorrKOInstance,
) -> tuple[CorrKOInstance, frozenset[int]]:
    """Normalize a light-large reward part into canonical two-point form.

    A vertex is eligible when its reward sits on a single outcome that is
    collectable: probability in (0, 1/2], size above half the horizon but
    within it.  Every other vertex becomes a zero job, which never lowers
    any policy's value on the eligible vertices (their rewards were
    uncollectable and a zero size only shortens later start times).
    """
    horizon = inst.processing_budget
    eligible = set()
    dists = []
    for v in range(inst.n):
        d = inst.dists[v]
        if v == inst.root:
            dists.append(d)
            continue
        payers = [a for a in d.atoms if a.reward > 0]
        if len(payers) == 1:
            atom = payers[0]
            if (
                2 * atom.size > horizon
                and atom.size <= horizon
                and 2 * atom.prob <= 1
            ):
                eligible.add(v)
                dists.append(
                    JointDistribution(
                        (
                            Atom(atom.size, atom.reward, atom.prob),
                            Atom(0, Fraction(0), 1 - atom.prob),
                        )
                    )
                )
                continue
        dists.append(JointDistribution.point())
    canonical = CorrKOInstance(
        inst.metric,
        inst.root,
        inst.travel_budget,
        horizon,
        tuple(dists),
    )
    return canonical, frozenset(eligible)


def _light_branch_policy(
    light: CorrKOInstance, *, solver: str = "exact", eps: Fraction = Fraction(1, 100)
) -> BranchResult:
    """Light-large branch via the deadline-orienteering reduction.

    For Bernoulli inputs the small outcome sizes are zero, so the reduced
    instance's deadlines are vacuous and it is plain knapsack
    orienteering over rewards p_v R_v with knapsack weights p_v and budget
    one.  The solved path is pruned to eligible vertices (the others carry
    zero reduced reward), and any feasible path retains at least a quarter
    of its reduced reward when run on the stochastic instance.
    """
    canonical, eligible = _two_point_canonical(light)
    root = light.root
    if not eligible:
        policy = NonAdaptivePolicy((root,))
        value = eval_nonadaptive_exact(light, policy)
        return BranchResult(policy, value, value, (root,))
    reduced = tcsko_to_okd(canonical)
    ko = KnapOrientInstance(
        light.metric,
        root,
        None,
        light.travel_budget,
        reduced.rewards,
        reduced.extra_weights,
        reduced.extra_budget,
    )
    if solver == "exact":
        result = knap_orient_exact(ko, allowed=eligible | {root})
    elif solver == "lagrangian":
        result = lagrangian_knap_reduce(
            orienteering_exact, Fraction(1), ko, eps=eps
        )
    else:
        raise ValueError(f"unknown solver {solver!r}")
    pruned = tuple(v for v in result.path if v == root or v in eligible)
    policy = NonAdaptivePolicy(pruned)
    value = eval_nonadaptive_exact(light, policy)
    return BranchResult(policy, value, value, result.path)


@dataclass(frozen=True)
class BernoulliResult:
    """Outcome of the weighted-Bernoulli pipeline.

    ``constant`` is the end-to-end guarantee divisor: the sum of the
    branch divisors 80 (small outcomes), 4 * alpha * 5000/1967 (light
    large, alpha being the inner solver's factor), and 4 (heavy large).
    ``mixture_value`` is the beta-proportional mixture's exact expectation
    on the full instance, which is at least the adaptive optimum divided
    by ``constant``; the returned policy only improves on it in ``best``
    mode.
    """

    policy: NonAdaptivePolicy
    value: Fraction
    constant: Fraction
    betas: tuple[Fraction, Fraction, Fraction]
    branch: int
    branch_policies: tuple[NonAdaptivePolicy, ...]
    branch_values: tuple[Fraction, ...]
    mixture_value: Fraction
    mode: str


def bernoulli_csko(
    inst: CorrKOInstance,
    *,
    mode: str = "best",
    solver: str = "exact",
    seed: Optional[int] = None,
    eps: Fraction = Fraction(1, 100),
) -> BernoulliResult:
    """Constant-factor pipeline for weighted-Bernoulli size distributions.

    Decomposes the rewards three ways, solves each branch (expected-size
    thinning; the vacuous-deadline knapsack-orienteering reduction, exact
    or Lagrangian; best single heavy vertex), and combines them.  ``best``
    mode returns the branch whose policy scores highest on the full
    instance; ``sampled`` draws a branch with probability proportional to
    its divisor, which is the mixture the guarantee is stated for.
    """
    if mode not in ("best", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    _require_bernoulli(inst)
    alpha = Fraction(1) if solver == "exact" else 3 * (1 + Fraction(eps))
    parts = decompose_difficult(inst, alpha=alpha)
    small_branch = truncated_branch_policy(parts.truncated, seed=seed)
    light_branch = _light_branch_policy(
        parts.large_light, solver=solver, eps=eps
    )
    heavy_branch = heavy_branch_policy(
        parts.large_heavy, vertices=parts.heavy_vertices
    )
    branches = (small_branch, light_branch, heavy_branch)
    full_values = tuple(
        eval_nonadaptive_exact(inst, b.policy) for b in branches
    )
    betas = parts.betas
    constant = sum(betas, Fraction(0))
    mixture = (
        sum((b * v for b, v in zip(betas, full_values)), Fraction(0)) / constant
    )
    index = choose_branch(full_values, betas, mode=mode, seed=seed)
    return BernoulliResult(
        branches[index].policy,
        full_values[index],
        constant,
        betas,
        index,
        tuple(b.policy for b in branches),
        tuple(b.value for b in branches),
        mixture,
        mode,
    )


# ---------------------------------------------------------------------------
# Cancellation pipeline.


def _repaired_chain(
    profile: tuple[list, list, list], zbar: list[float]
) -> tuple[list[Fraction], list[Fraction]]:
    """Exact per-vertex processing chain closest to a float chain.

    Rebuilds z with a unit head, clamped to the float solution's
    normalized values, to monotonicity, and to the stop-rate recursion
    z_{t+1} <= (1 - rate_t) z_t (with survival-zero steps forced to
    zero).  The stop masses s_t = z_t - z_{t+1} are then nonnegative and
    meet every rate floor by construction, so the chain is feasible in
    exact arithmetic whatever the float drift was.
    """
    survival, point, _ = profile
    budget = len(point) - 1
    head = zbar[0]
    chain = [Fraction(1)]
    for t in range(1, budget + 1):
        if survival[t - 1] > 0:
            rate = point[t - 1] / survival[t - 1]
            cap = (1 - rate) * chain[t - 1]
        else:
            cap = Fraction(0)
        raw = Fraction(0)
        if head > FEAS_TOL:
            raw = max(Fraction(0), Fraction(zbar[t]) / Fraction(head))
        chain.append(min(cap, raw))
    chain.append(Fraction(0))
    masses = [chain[t] - chain[t + 1] for t in range(budget + 1)]
    return chain, masses


def ck_restricted_violations(
    inst: CorrKOInstance,
    path: tuple[int, ...],
    z: Mapping[tuple[int, int], Fraction],
    s: Mapping[tuple[int, int], Fraction],
) -> list[str]:
    """Exact feasibility check of a restricted chain solution.

    For every path vertex: unit head, nonnegativity, chain conservation
    z_t = s_t + z_{t+1}, and the stop-rate floors; jointly, the expected
    stop time over the whole path within the processing budget.
    """
    budget = inst.processing_budget
    out: list[str] = []
    total_time = Fraction(0)
    for u in path:
        survival, point, _ = _size_profile(inst, u)
        if z.get((u, 0)) != 1:
            out.append(f"vertex {u}: chain head is {z.get((u, 0))}, expected 1")
        for t in range(budget + 1):
            zt = z.get((u, t), Fraction(0))
            st = s.get((u, t), Fraction(0))
            if zt < 0 or st < 0:
                out.append(f"vertex {u}: negative mass at step {t}")
            nxt = z.get((u, t + 1), Fraction(0)) if t < budget else Fraction(0)
            if zt != st + nxt:
                out.append(f"vertex {u}: chain breaks at step {t}")
            if survival[t] > 0:
                rate = point[t] / survival[t]
                if rate > 0 and st < rate * zt:
                    out.append(
                        f"vertex {u}: stop mass at step {t} is below the "
                        f"completion-rate floor"
                    )
            total_time += t * st
    if total_time > budget:
        out.append(
            f"expected processing time {total_time} exceeds the budget {budget}"
        )
    return out


def _threshold_masses(
    profile: tuple[list, list, list],
    chain: list[Fraction],
    masses: list[Fraction],
) -> tuple[dict[Optional[int], Fraction], tuple]:
    """Cancellation-time distribution induced by a feasible chain.

    Stopping mass beyond the forced completion rate becomes "cancel at t"
    mass (t = 0 means the job is skipped outright); the leftover is
    "never cancel".  Returns the raw mass map (with the possible 0 key)
    and its policy encoding with the time-0 mass folded into time 1,
    which the threshold search can still undo through its skip option.
    """
    survival, point, _ = profile
    budget = len(point) - 1
    raw: dict[Optional[int], Fraction] = {}
    accounted = Fraction(0)
    for t in range(budget + 1):
        forced = (
            point[t] / survival[t] * chain[t] if survival[t] > 0 else Fraction(0)
        )
        extra = masses[t] - forced
        if extra > 0:
            raw[t] = extra
        accounted += max(extra, Fraction(0))
    residual = 1 - accounted
    if residual > 0:
        raw[None] = residual
    folded: dict[Optional[int], Fraction] = {}
    for t, mass in raw.items():
        key = 1 if t == 0 else t
        folded[key] = folded.get(key, Fraction(0)) + mass
    encoding = tuple(
        (t, folded[t])
        for t in sorted(folded, key=lambda x: (x is None, x))
        if folded[t] > 0
    )
    if not encoding:
        encoding = ((None, Fraction(1)),)
    return raw, encoding


def _threshold_search(
    inst: CorrKOInstance,
    path: tuple[int, ...],
    raw_masses: Sequence[dict[Optional[int], Fraction]],
    *,
    search_cap: int = SEARCH_VECTOR_CAP,
) -> tuple[CancellationPolicy, Fraction]:
    """Best deterministic cancellation vector over the path.

    Per non-root vertex the options are: never cancel, cancel at any time
    in 1..W, or skip the vertex entirely (the deterministic stand-in for
    cancel-at-zero).  The full grid is searched when it fits the cap,
    otherwise only the scheme's support; since the randomized scheme is a
    product mixture of support vectors and the value is multilinear in the
    per-vertex choices, the best vector found is at least the scheme's
    expectation either way.  Beyond the cap even on supports, a greedy
    coordinate sweep stands in (and the certificate is only advisory).
    """
    budget = inst.processing_budget
    full_options: list[tuple] = [("keep", None), ("skip", None)] + [
        ("keep", t) for t in range(1, budget + 1)
    ]

    options: list[list[tuple]] = []
    for u, raw in zip(path, raw_masses):
        if u == inst.root:
            options.append([("keep", None)])
            continue
        support: list[tuple] = [("keep", None)]
        for t in raw:
            if t == 0:
                support.append(("skip", None))
            elif t is not None:
                support.append(("keep", t))
        options.append(support)

    grid = 1
    for _ in path[1:]:
        grid *= len(full_options)
    if grid <= search_cap:
        options = [
            [("keep", None)] if u == inst.root else list(full_options)
            for u in path
        ]
    else:
        supported = 1
        for opts in options:
            supported *= len(opts)
        if supported > search_cap:
            return _greedy_threshold_sweep(inst, path)

    best_policy: Optional[CancellationPolicy] = None
    best_value = Fraction(-1)
    for combo in itertools.product(*options):
        sequence = tuple(
            u for u, (action, _) in zip(path, combo) if action == "keep"
        )
        thresholds = tuple(
            ((t, Fraction(1)),)
            for (action, t) in combo
            if action == "keep"
        )
        policy = CancellationPolicy(sequence, thresholds)
        value = eval_cancellation_exact(inst, policy)
        if value > best_value:
            best_value, best_policy = value, policy
    assert best_policy is not None
    return best_policy, best_value


def _greedy_threshold_sweep(
    inst: CorrKOInstance, path: tuple[int, ...]
) -> tuple[CancellationPolicy, Fraction]:
    """One coordinate-ascent pass over per-vertex cancellation choices."""
    budget = inst.processing_budget
    choices: list[tuple] = [("keep", None)] * len(path)

    def evaluate(current: list[tuple]) -> tuple[CancellationPolicy, Fraction]:
        sequence = tuple(
            u for u, (action, _) in zip(path, current) if action == "keep"
        )
        thresholds = tuple(
            ((t, Fraction(1)),) for (action, t) in current if action == "keep"
        )
        policy = CancellationPolicy(sequence, thresholds)
        return policy, eval_cancellation_exact(inst, policy)

    best_policy, best_value = evaluate(choices)
    for i, u in enumerate(path):
        if u == inst.root:
            continue
        for option in [("keep", None), ("skip", None)] + [
            ("keep", t) for t in range(1, budget + 1)
        ]:
            trial = list(choices)
            trial[i] = option
            policy, value = evaluate(trial)
            if value > best_value:
                best_value, best_policy = value, policy
                choices = trial
    return best_policy, best_value


@dataclass(frozen=True)
class CancelPipelineResult:
    """Outcome of the cancellation pipeline.

    Branch 0 wraps the no-cancellation scale sweep on the large-outcome
    rewards; branch 1 rounds the cancellation relaxation of the
    small-outcome rewards into a path ``path`` with induced reward
    ``path_reward`` and searches threshold vectors over it.  All values
    are exact; ``value`` is the chosen policy's value on the full
    instance, while ``scheme_value`` and ``search_value`` are measured on
    the small-reward part, where the eighth-of-``path_reward`` guarantee
    lives.  ``restricted_z``/``restricted_s`` hold the exact repaired
    chains over ``path``.
    """

    policy: CancellationPolicy
    value: Fraction
    branch: int
    large_policy: CancellationPolicy
    large_value: Fraction
    small_policy: CancellationPolicy
    small_value: Fraction
    scheme_policy: CancellationPolicy
    scheme_value: Fraction
    search_value: Fraction
    lp_objective: float
    path: tuple[int, ...]
    path_reward: Fraction
    restricted_z: Mapping[tuple[int, int], Fraction]
    restricted_s: Mapping[tuple[int, int], Fraction]


def cancel_pipeline(
    inst: CorrKOInstance,
    *,
    mode: str = "best",
    seed: Optional[int] = None,
    search_cap: int = SEARCH_VECTOR_CAP,
) -> CancelPipelineResult:
    """Two-branch algorithm for the cancellation objective.

    Large-outcome rewards gain nothing from cancellation (a large job
    either fits whole or was not worth starting), so branch 0 runs the
    scale sweep there and never cancels.  Branch 1 solves the per-vertex
    processing-chain relaxation of the small-outcome part, repairs each
    chain into exact arithmetic, forms the induced knapsack-orienteering
    instance (expected stop times as weights, chain-collectable rewards,
    budget W), rounds it to a path Q, and converts the restricted chains
    into cancellation thresholds; an exhaustive threshold search certifies
    that some vector achieves at least an eighth of Q's induced reward.
    ``best`` mode returns the better branch by exact value; ``sampled``
    flips a fair seeded coin, matching the analyzed mixture.
    """
    if mode not in ("best", "sampled"):
        raise ValueError(f"unknown mode {mode!r}")
    rng = random.Random(seed)
    sweep_seed = rng.getrandbits(32)
    coin = rng.random()

    large, small = split_rewards(inst)
    sweep = poly_logW(large, mode="derandomize", seed=sweep_seed)
    large_policy = CancellationPolicy(
        sweep.policy.sequence,
        tuple(((None, Fraction(1)),) for _ in sweep.policy.sequence),
    )
    large_value = eval_cancellation_exact(inst, large_policy)

    budget = inst.processing_budget
    root = inst.root
    if inst.n >= 2:
        relax = solve_ckoclp(small)
        lp_objective = relax.objective
        profiles = [_size_profile(small, u) for u in range(inst.n)]
        chains = []
        masses = []
        for u in range(inst.n):
            zbar = [relax.zt.get((u, t), 0.0) for t in range(budget + 1)]
            chain, mass = _repaired_chain(profiles[u], zbar)
            chains.append(chain)
            masses.append(mass)
        weights = tuple(
            sum(chains[u][1 : budget + 1], Fraction(0)) for u in range(inst.n)
        )
        rewards = []
        for u in range(inst.n):
            survival, _, reward = profiles[u]
            rewards.append(
                sum(
                    (
                        chains[u][t] * reward[t] / survival[t]
                        for t in range(budget + 1)
                        if survival[t] > 0 and reward[t] > 0
                    ),
                    Fraction(0),
                )
            )
        induced = KnapOrientInstance(
            inst.metric,
            root,
            None,
            inst.travel_budget,
            tuple(rewards),
            weights,
            Fraction(budget),
        )
        try:
            path = round_kolp(induced, solve_kolp(induced)).path
        except PathInfeasibleError:
            path = (root,)
        path_reward = sum((rewards[u] for u in path), Fraction(0))
    else:
        lp_objective = 0.0
        profiles = [_size_profile(small, u) for u in range(inst.n)]
        chains = [[Fraction(1)] + [Fraction(0)] * (budget + 1)]
        masses = [[Fraction(1)] + [Fraction(0)] * budget]
        path = (root,)
        path_reward = Fraction(0)

    restricted_z = {
        (u, t): chains[u][t] for u in path for t in range(budget + 1)
    }
    restricted_s = {
        (u, t): masses[u][t] for u in path for t in range(budget + 1)
    }
    raw_masses = []
    encodings = []
    for u in path:
        raw, encoding = _threshold_masses(profiles[u], chains[u], masses[u])
        raw_masses.append(raw)
        encodings.append(encoding)
    scheme_policy = CancellationPolicy(path, tuple(encodings))
    scheme_value = eval_cancellation_exact(small, scheme_policy)
    small_policy, search_value = _threshold_search(
        small, path, raw_masses, search_cap=search_cap
    )
    small_value = eval_cancellation_exact(inst, small_policy)

    if mode == "best":
        branch = 0 if large_value >= small_value else 1
    else:
        branch = 0 if coin < 0.5 else 1
    policy = large_policy if branch == 0 else small_policy
    value = large_value if branch == 0 else small_value
    return CancelPipelineResult(
        policy,
        value,
        branch,
        large_policy,
        large_value,
        small_policy,
        small_value,
        scheme_policy,
        scheme_value,
        search_value,
        lp_objective,
        path,
        path_reward,
        restricted_z,
        restricted_s,
    )
