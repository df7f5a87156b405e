"""Policies over correlated orienteering instances and their exact evaluation.

Three policy classes are supported: fixed vertex sequences, adaptive
decision trees branching on observed job outcomes, and fixed sequences
with per-vertex random cancellation thresholds.  Every evaluator works in
exact rational arithmetic over sparse elapsed-time distributions, so huge
processing budgets cost nothing as long as few distinct running totals are
reachable.

Execution semantics shared by all evaluators: a vertex is visited only
while the travel prefix fits the travel budget; a job that would finish
after the processing budget W still runs physically but earns nothing and
the policy stops afterwards (states past W are dropped as absorbing).
"""

from __future__ import annotations

import math
import random
import re
from dataclasses import dataclass
from fractions import Fraction

from .core import CorrKOInstance, InstanceFormatError, JointDistribution, start_reward

__all__ = [
    "AdaptivePolicyTree",
    "CancellationPolicy",
    "NonAdaptivePolicy",
    "PolicyNode",
    "PolicyValidationError",
    "SimulationResult",
    "eval_adaptive_exact",
    "eval_cancellation_exact",
    "eval_nonadaptive_exact",
    "parse_policy",
    "serialize_policy",
    "simulate",
    "validate_policy",
]


class PolicyValidationError(ValueError):
    """Raised when a policy is structurally incompatible with an instance."""


@dataclass(frozen=True)
class NonAdaptivePolicy:
    """Fixed visiting order, starting at the instance root."""

    sequence: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.sequence:
            raise ValueError("sequence must be nonempty")
        if len(set(self.sequence)) != len(self.sequence):
            raise ValueError("sequence must not repeat vertices")


@dataclass(frozen=True)
class PolicyNode:
    """Decision-tree node: visit ``vertex``, then branch on the atom index.

    ``children`` maps atom indices to subtrees; a missing index or an
    explicit None child means the policy stops on that outcome.  The
    optional annotations record the elapsed processing time on entry and
    the probability of reaching the node; when present they are checked
    against recomputed values.
    """

    vertex: int
    children: tuple[tuple[int, "PolicyNode | None"], ...] = ()
    elapsed: int | None = None
    reach_prob: Fraction | None = None

    def __post_init__(self) -> None:
        seen = set()
        for idx, _child in self.children:
            if idx in seen:
                raise ValueError(f"duplicate branch for atom index {idx}")
            seen.add(idx)

    def child_map(self) -> dict[int, "PolicyNode | None"]:
        return dict(self.children)


@dataclass(frozen=True)
class AdaptivePolicyTree:
    root: PolicyNode


@dataclass(frozen=True)
class CancellationPolicy:
    """Fixed sequence plus an independent cancellation threshold per vertex.

    ``thresholds[i]`` is a distribution over stopping times for the i-th
    sequence vertex: pairs (t, prob) with integer t >= 1 meaning "cancel
    after t time units if the job is still running", or t = None meaning
    "never cancel".  A job cancelled before completion earns nothing and
    its vertex cannot be revisited.
    """

    sequence: tuple[int, ...]
    thresholds: tuple[tuple[tuple[int | None, Fraction], ...], ...]

    def __post_init__(self) -> None:
        if not self.sequence:
            raise ValueError("sequence must be nonempty")
        if len(set(self.sequence)) != len(self.sequence):
            raise ValueError("sequence must not repeat vertices")
        if len(self.thresholds) != len(self.sequence):
            raise ValueError("need exactly one threshold distribution per vertex")
        for dist in self.thresholds:
            total = Fraction(0)
            for t, p in dist:
                if t is not None and (not isinstance(t, int) or t < 1):
                    raise ValueError("cancellation times must be ints >= 1 or None")
                if not 0 <= p <= 1:
                    raise ValueError("threshold probabilities must lie in [0, 1]")
                total += p
            if total != 1:
                raise ValueError(f"threshold probabilities sum to {total}, expected 1")


Policy = NonAdaptivePolicy | AdaptivePolicyTree | CancellationPolicy


def _check_vertices(inst: CorrKOInstance, sequence: tuple[int, ...]) -> None:
    for v in sequence:
        if not 0 <= v < inst.n:
            raise PolicyValidationError(f"vertex {v} out of range")
    if sequence[0] != inst.root:
        raise PolicyValidationError(
            f"policy must start at the root {inst.root}, got {sequence[0]}"
        )


def validate_policy(inst: CorrKOInstance, policy: Policy) -> None:
    """Raise PolicyValidationError if ``policy`` does not fit ``inst``.

    For adaptive trees this checks root label, branch indices against atom
    counts, distinct vertices along every root-to-node path, travel budget
    along every path, and consistency of any elapsed/reach annotations.
    """
    if isinstance(policy, NonAdaptivePolicy):
        _check_vertices(inst, policy.sequence)
        return
    if isinstance(policy, CancellationPolicy):
        _check_vertices(inst, policy.sequence)
        for dist in policy.thresholds:
            for t, _p in dist:
                if t is not None and t > inst.processing_budget:
                    raise PolicyValidationError(
                        "cancellation times must not exceed the processing budget"
                    )
        return
    if not isinstance(policy, AdaptivePolicyTree):
        raise PolicyValidationError(f"unknown policy type {type(policy).__name__}")
    if policy.root.vertex != inst.root:
        raise PolicyValidationError(
            f"tree root visits {policy.root.vertex}, instance root is {inst.root}"
        )

    def walk(node: PolicyNode, onpath: set[int], travel: int, elapsed: int, reach: Fraction) -> None:
        v = node.vertex
        if not 0 <= v < inst.n:
            raise PolicyValidationError(f"vertex {v} out of range")
        if v in onpath:
            raise PolicyValidationError(f"vertex {v} repeated along a policy path")
        if travel > inst.travel_budget:
            raise PolicyValidationError(
                f"travel {travel} to vertex {v} exceeds budget {inst.travel_budget}"
            )
        if node.elapsed is not None and node.elapsed != elapsed:
            raise PolicyValidationError(
                f"node for vertex {v} annotates elapsed {node.elapsed}, actual {elapsed}"
            )
        if node.reach_prob is not None and node.reach_prob != reach:
            raise PolicyValidationError(
                f"node for vertex {v} annotates reach probability {node.reach_prob}, actual {reach}"
            )
        atoms = inst.dists[v].atoms
        onpath.add(v)
        for idx, child in node.children:
            if not 0 <= idx < len(atoms):
                raise PolicyValidationError(
                    f"branch on atom {idx} but vertex {v} has {len(atoms)} atoms"
                )
            if child is None:
                continue
            atom = atoms[idx]
            walk(
                child,
                onpath,
                travel + inst.metric.distance(v, child.vertex),
                elapsed + atom.size,
                reach * atom.prob,
            )
        onpath.remove(v)

    walk(policy.root, set(), 0, 0, Fraction(1))


def eval_nonadaptive_exact(inst: CorrKOInstance, policy: NonAdaptivePolicy) -> Fraction:
    """Exact expected reward of a fixed sequence.

    Only the maximal travel-affordable prefix is visited.  The DP carries a
    sparse distribution over elapsed processing time; mass whose running
    total passes W is dropped since nothing downstream can earn.
    """
    _check_vertices(inst, policy.sequence)
    big_w = inst.processing_budget
    states: dict[int, Fraction] = {0: Fraction(1)}
    total = Fraction(0)
    travel = 0
    prev: int | None = None
    for v in policy.sequence:
        if prev is not None:
            travel += inst.metric.distance(prev, v)
            if travel > inst.travel_budget:
                break
        prev = v
        atoms = inst.dists[v].atoms
        nxt: dict[int, Fraction] = {}
        for t, pr in states.items():
            for atom in atoms:
                done = t + atom.size
                if done <= big_w:
                    if atom.reward:
                        total += pr * atom.prob * atom.reward
                    key = done
                    nxt[key] = nxt.get(key, Fraction(0)) + pr * atom.prob
        states = nxt
        if not states:
            break
    return total


def eval_adaptive_exact(inst: CorrKOInstance, policy: AdaptivePolicyTree) -> Fraction:
    """Exact expected reward of a decision tree.

    Equals sum over tree nodes of Pr[node reached] * start_reward(v, i_v)
    where i_v is the elapsed processing time on entry.  Branches whose atom
    overflows W are dead: the job still runs but the policy stops.
    """
    validate_policy(inst, policy)
    big_w = inst.processing_budget

    def walk(node: PolicyNode, elapsed: int, reach: Fraction) -> Fraction:
        dist = inst.dists[node.vertex]
        value = reach * start_reward(dist, elapsed, big_w)
        children = node.child_map()
        for idx, child in children.items():
            if child is None:
                continue
            atom = dist.atoms[idx]
            done = elapsed + atom.size
            if done <= big_w:
                value += walk(child, done, reach * atom.prob)
        return value

    return walk(policy.root, 0, Fraction(1))


def eval_cancellation_exact(inst: CorrKOInstance, policy: CancellationPolicy) -> Fraction:
    """Exact expected reward of a sequence with cancellation thresholds.

    The threshold T_v is drawn independently of the job; the job runs for
    min(S_v, T_v) time and pays out iff S_v <= T_v and it completes within
    W.  Cancelled or overflowing mass past W is dropped as usual.
    """
    validate_policy(inst, policy)
    big_w = inst.processing_budget
    states: dict[int, Fraction] = {0: Fraction(1)}
    total = Fraction(0)
    travel = 0
    prev: int | None = None
    for v, th_dist in zip(policy.sequence, policy.thresholds):
        if prev is not None:
            travel += inst.metric.distance(prev, v)
            if travel > inst.travel_budget:
                break
        prev = v
        atoms = inst.dists[v].atoms
        nxt: dict[int, Fraction] = {}
        for t, pr in states.items():
            for atom in atoms:
                for cutoff, q in th_dist:
                    if not q:
                        continue
                    weight = pr * atom.prob * q
                    if cutoff is None or atom.size <= cutoff:
                        ran = atom.size
                        if t + ran <= big_w and atom.reward:
                            total += weight * atom.reward
                    else:
                        ran = cutoff
                    key = t + ran
                    if key <= big_w:
                        nxt[key] = nxt.get(key, Fraction(0)) + weight
        states = nxt
        if not states:
            break
    return total


@dataclass(frozen=True)
class SimulationResult:
    mean: Fraction
    stdev: float
    ci95: tuple[float, float]
    trials: int


def _sample_atom(rng: random.Random, dist: JointDistribution) -> int:
    u = rng.random()
    acc = Fraction(0)
    for idx, atom in enumerate(dist.atoms):
        acc += atom.prob
        if u < acc:
            return idx
    return len(dist.atoms) - 1


def _sample_threshold(
    rng: random.Random, th_dist: tuple[tuple[int | None, Fraction], ...]
) -> int | None:
    u = rng.random()
    acc = Fraction(0)
    for t, p in th_dist:
        acc += p
        if u < acc:
            return t
    return th_dist[-1][0]


def _run_trial(inst: CorrKOInstance, policy: Policy, rng: random.Random) -> Fraction:
    big_w = inst.processing_budget
    reward = Fraction(0)
    if isinstance(policy, AdaptivePolicyTree):
        node: PolicyNode | None = policy.root
        elapsed = 0
        while node is not None:
            dist = inst.dists[node.vertex]
            idx = _sample_atom(rng, dist)
            atom = dist.atoms[idx]
            if elapsed + atom.size > big_w:
                break
            elapsed += atom.size
            reward += atom.reward
            node = node.child_map().get(idx)
        return reward
    travel = 0
    prev: int | None = None
    elapsed = 0
    if isinstance(policy, NonAdaptivePolicy):
        pairs = [(v, None) for v in policy.sequence]
    else:
        pairs = list(zip(policy.sequence, policy.thresholds))
    for v, th_dist in pairs:
        if prev is not None:
            travel += inst.metric.distance(prev, v)
            if travel > inst.travel_budget:
                break
        prev = v
        dist = inst.dists[v]
        atom = dist.atoms[_sample_atom(rng, dist)]
        cutoff = None if th_dist is None else _sample_threshold(rng, th_dist)
        if cutoff is None or atom.size <= cutoff:
            elapsed += atom.size
            if elapsed > big_w:
                break
            reward += atom.reward
        else:
            elapsed += cutoff
            if elapsed > big_w:
                break
    return reward


def simulate(inst: CorrKOInstance, policy: Policy, trials: int, seed: int) -> SimulationResult:
    """Monte Carlo estimate with a deterministic per-trial seed schedule.

    Trial i uses random.Random(f"{seed}:{i}"), so reruns are bit-identical
    and independent of execution order.  The mean is an exact rational
    average of the sampled rewards; stdev and the normal-approximation 95%
    confidence interval are reported as floats.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    validate_policy(inst, policy)
    values = []
    for i in range(trials):
        rng = random.Random(f"{seed}:{i}")
        values.append(_run_trial(inst, policy, rng))
    mean = sum(values, Fraction(0)) / trials
    if trials > 1:
        var = sum(((x - mean) ** 2 for x in values), Fraction(0)) / (trials - 1)
    else:
        var = Fraction(0)
    stdev = math.sqrt(float(var))
    half = 1.96 * stdev / math.sqrt(trials)
    fmean = float(mean)
    return SimulationResult(mean, stdev, (fmean - half, fmean + half), trials)


# ---------------------------------------------------------------------------
# Policy file format
#
# nonadaptive:   "policy nonadaptive" / "seq <v0> <v1> ..."
# adaptive:      "policy adaptive" / one nested term: (v a:(..) b:stop ...)
# cancellation:  "policy cancellation" / "seq ..." / per-vertex lines
#                "th <v>: (t, num/den) (inf, num/den) ..."
# ---------------------------------------------------------------------------


def _node_to_term(node: PolicyNode) -> str:
    parts = [str(node.vertex)]
    for idx, child in node.children:
        parts.append(f"{idx}:{'stop' if child is None else _node_to_term(child)}")
    return "(" + " ".join(parts) + ")"


def serialize_policy(policy: Policy) -> str:
    if isinstance(policy, NonAdaptivePolicy):
        return "policy nonadaptive\nseq " + " ".join(map(str, policy.sequence)) + "\n"
    if isinstance(policy, AdaptivePolicyTree):
        return "policy adaptive\n" + _node_to_term(policy.root) + "\n"
    if isinstance(policy, CancellationPolicy):
        lines = ["policy cancellation", "seq " + " ".join(map(str, policy.sequence))]
        for v, th_dist in zip(policy.sequence, policy.thresholds):
            entries = " ".join(
                f"({'inf' if t is None else t}, {p.numerator}/{p.denominator})"
                for t, p in th_dist
            )
            lines.append(f"th {v}: {entries}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown policy type {type(policy).__name__}")


class _TermParser:
    def __init__(self, text: str) -> None:
        self.text = text
        self.pos = 0

    def error(self, msg: str) -> InstanceFormatError:
        return InstanceFormatError(f"{msg} at offset {self.pos}")

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def expect(self, ch: str) -> None:
        if self.pos >= len(self.text) or self.text[self.pos] != ch:
            raise self.error(f"expected {ch!r}")
        self.pos += 1

    def read_int(self) -> int:
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isdigit():
            self.pos += 1
        if start == self.pos:
            raise self.error("expected an integer")
        return int(self.text[start : self.pos])

    def parse_node(self) -> PolicyNode:
        self.skip_ws()
        self.expect("(")
        self.skip_ws()
        vertex = self.read_int()
        children = []
        while True:
            self.skip_ws()
            if self.pos < len(self.text) and self.text[self.pos] == ")":
                self.pos += 1
                return PolicyNode(vertex, tuple(children))
            idx = self.read_int()
            self.expect(":")
            if self.text.startswith("stop", self.pos):
                self.pos += 4
                children.append((idx, None))
            else:
                children.append((idx, self.parse_node()))


_TH_RE = re.compile(r"^\((inf|\d+), (\d+)/(\d+)\)$")


def parse_policy(text: str) -> Policy:
    lines = [line.rstrip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise InstanceFormatError("empty policy file")
    kind = lines[0]
    if kind == "policy nonadaptive":
        if len(lines) != 2 or not lines[1].startswith("seq "):
            raise InstanceFormatError("expected a single seq line")
        return NonAdaptivePolicy(tuple(int(x) for x in lines[1][4:].split()))
    if kind == "policy adaptive":
        parser = _TermParser(" ".join(lines[1:]))
        node = parser.parse_node()
        parser.skip_ws()
        if parser.pos != len(parser.text):
            raise InstanceFormatError("trailing content after adaptive policy term")
        return AdaptivePolicyTree(node)
    if kind == "policy cancellation":
        if len(lines) < 2 or not lines[1].startswith("seq "):
            raise InstanceFormatError("expected a seq line")
        seq = tuple(int(x) for x in lines[1][4:].split())
        if len(lines) != 2 + len(seq):
            raise InstanceFormatError("expected one threshold line per sequence vertex")
        thresholds = []
        for v, line in zip(seq, lines[2:]):
            prefix = f"th {v}: "
            if not line.startswith(prefix):
                raise InstanceFormatError(f"expected threshold line for vertex {v}: {line!r}")
            entries = []
            for chunk in line[len(prefix) :].split(") ("):
                chunk = chunk.strip()
                if not chunk.startswith("("):
                    chunk = "(" + chunk
                if not chunk.endswith(")"):
                    chunk = chunk + ")"
                m = _TH_RE.match(chunk)
                if m is None:
                    raise InstanceFormatError(f"bad threshold entry {chunk!r}")
                t = None if m.group(1) == "inf" else int(m.group(1))
                entries.append((t, Fraction(int(m.group(2)), int(m.group(3)))))
            thresholds.append(tuple(entries))
        return CancellationPolicy(seq, tuple(thresholds))
    raise InstanceFormatError(f"unknown policy kind line: {kind!r}")
