"""Exact data model for correlated stochastic orienteering instances.

An instance lives on a finite metric (integer distances) with a designated
root vertex.  Visiting a vertex runs a stochastic job whose (size, reward)
pair is drawn from a finite joint distribution; reward is collected only if
the job finishes within the processing budget W, and travel is limited by a
separate budget B.  All probabilities and rewards are ``fractions.Fraction``
so every derived quantity in this module is exact.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple

__all__ = [
    "Atom",
    "CorrKOInstance",
    "FiniteMetric",
    "InstanceFormatError",
    "JointDistribution",
    "MetricViolation",
    "TruncatedStats",
    "log2_ceil",
    "parse_instance",
    "serialize_instance",
    "split_rewards",
    "start_reward",
    "truncated_mean",
    "validate_metric",
]


class InstanceFormatError(ValueError):
    """Raised when an instance file does not follow the expected format."""


def log2_ceil(w: int) -> int:
    """Smallest integer L with 2**L >= w, for w >= 1."""
    if w < 1:
        raise ValueError("log2_ceil requires a positive integer")
    return (w - 1).bit_length()


class Atom(NamedTuple):
    """One outcome of a job: processing size, reward, probability."""

    size: int
    reward: Fraction
    prob: Fraction


@dataclass(frozen=True)
class MetricViolation:
    """A single failed metric axiom with a witnessing vertex triple.

    ``kind`` is one of ``"diagonal"``, ``"symmetry"``, ``"triangle"`` or
    ``"negative"``.  For diagonal/negative violations the witness repeats a
    vertex to keep the triple shape uniform.
    """

    kind: str
    witness: tuple[int, int, int]
    detail: str


@dataclass(frozen=True)
class FiniteMetric:
    """Symmetric integer distance matrix over vertices 0..n-1.

    The constructor only checks shape and integrality; use
    :func:`validate_metric` to audit the metric axioms.  Violations are
    reported as data rather than raised, so generators can assert cleanly
    and diagnostics can show every offending triple at once.
    """

    distances: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        n = len(self.distances)
        for row in self.distances:
            if len(row) != n:
                raise ValueError("distance matrix must be square")
            for entry in row:
                if not isinstance(entry, int) or isinstance(entry, bool):
                    raise ValueError("distances must be plain ints")

    @property
    def n(self) -> int:
        return len(self.distances)

    def distance(self, u: int, v: int) -> int:
        return self.distances[u][v]

    @staticmethod
    def from_rows(rows: Iterable[Iterable[int]]) -> "FiniteMetric":
        return FiniteMetric(tuple(tuple(int(x) for x in row) for row in rows))


def validate_metric(metric: FiniteMetric) -> list[MetricViolation]:
    """Check the metric axioms and report every violation found.

    Returns an empty list iff ``metric`` is a genuine (pseudo)metric:
    nonnegative entries, zero diagonal, symmetry, and the triangle
    inequality d(u,w) <= d(u,v) + d(v,w) for all triples.
    """
    d = metric.distances
    n = metric.n
    out: list[MetricViolation] = []
    for u in range(n):
        if d[u][u] != 0:
            out.append(
                MetricViolation("diagonal", (u, u, u), f"d({u},{u}) = {d[u][u]} != 0")
            )
        for v in range(n):
            if d[u][v] < 0:
                out.append(
                    MetricViolation("negative", (u, v, u), f"d({u},{v}) = {d[u][v]} < 0")
                )
            if u < v and d[u][v] != d[v][u]:
                out.append(
                    MetricViolation(
                        "symmetry", (u, v, u), f"d({u},{v}) = {d[u][v]} != {d[v][u]} = d({v},{u})"
                    )
                )
    for u in range(n):
        for v in range(n):
            for w in range(n):
                if d[u][w] > d[u][v] + d[v][w]:
                    out.append(
                        MetricViolation(
                            "triangle",
                            (u, v, w),
                            f"d({u},{w}) = {d[u][w]} > {d[u][v]} + {d[v][w]}",
                        )
                    )
    return out


@dataclass(frozen=True)
class JointDistribution:
    """Finite joint distribution over (size, reward) outcomes.

    Atom order is significant: adaptive policies key their branches by atom
    index.  Probabilities must be positive and sum to exactly 1; sizes are
    nonnegative integers and rewards nonnegative rationals.
    """

    atoms: tuple[Atom, ...]

    def __post_init__(self) -> None:
        if not self.atoms:
            raise ValueError("distribution needs at least one atom")
        total = Fraction(0)
        for atom in self.atoms:
            if not isinstance(atom.size, int) or isinstance(atom.size, bool):
                raise ValueError("atom sizes must be plain ints")
            if atom.size < 0:
                raise ValueError("atom sizes must be nonnegative")
            if not isinstance(atom.reward, Fraction) or atom.reward < 0:
                raise ValueError("atom rewards must be nonnegative Fractions")
            if not isinstance(atom.prob, Fraction) or not 0 < atom.prob <= 1:
                raise ValueError("atom probabilities must be Fractions in (0, 1]")
            total += atom.prob
        if total != 1:
            raise ValueError(f"atom probabilities sum to {total}, expected 1")

    @staticmethod
    def of(*triples: tuple[int, Fraction | int, Fraction]) -> "JointDistribution":
        return JointDistribution(
            tuple(Atom(int(s), Fraction(r), Fraction(p)) for s, r, p in triples)
        )

    @staticmethod
    def point(size: int = 0, reward: Fraction | int = 0) -> "JointDistribution":
        return JointDistribution((Atom(size, Fraction(reward), Fraction(1)),))


@dataclass(frozen=True)
class CorrKOInstance:
    """A rooted correlated orienteering instance.

    ``travel_budget`` bounds the total distance of the visiting path and
    ``processing_budget`` bounds the cumulative job time that still earns
    reward.  The root's job is the deterministic (size 0, reward 0) atom, so
    starting at the root costs nothing on either budget.
    """

    metric: FiniteMetric
    root: int
    travel_budget: int
    processing_budget: int
    dists: tuple[JointDistribution, ...]

    def __post_init__(self) -> None:
        if len(self.dists) != self.metric.n:
            raise ValueError("need exactly one distribution per vertex")
        if not 0 <= self.root < self.metric.n:
            raise ValueError("root out of range")
        if self.travel_budget < 0:
            raise ValueError("travel budget must be nonnegative")
        if self.processing_budget < 1:
            raise ValueError("processing budget must be at least 1")
        root_atoms = self.dists[self.root].atoms
        if root_atoms != (Atom(0, Fraction(0), Fraction(1)),):
            raise ValueError("root distribution must be the single atom (0, 0, 1)")

    @property
    def n(self) -> int:
        return self.metric.n

    def vertices(self) -> range:
        return range(self.metric.n)


def truncated_mean(dist: JointDistribution, j: int) -> Fraction:
    """E[min(S, 2^j)] for the size marginal S of ``dist``.

    These truncated means drive the per-scale knapsack weights: a job's
    size capped at 2^j is what it can consume of a length-2^j time window.
    """
    if j < 0:
        raise ValueError("truncation scale j must be nonnegative")
    cap = 1 << j
    return sum((atom.prob * min(atom.size, cap) for atom in dist.atoms), Fraction(0))


def start_reward(dist: JointDistribution, t: int, processing_budget: int) -> Fraction:
    """Expected reward of a job started after t time units have elapsed.

    Only outcomes finishing within the processing budget pay out, so this
    is sum of prob * reward over atoms with size <= W - t; it is 0 whenever
    t > W.  Monotone nonincreasing in t.
    """
    if t < 0:
        raise ValueError("elapsed time must be nonnegative")
    if t > processing_budget:
        return Fraction(0)
    slack = processing_budget - t
    return sum(
        (atom.prob * atom.reward for atom in dist.atoms if atom.size <= slack),
        Fraction(0),
    )


@dataclass(frozen=True)
class TruncatedStats:
    """Table of truncated means mu[v][j] = E[min(S_v, 2^j)] for j in 0..L.

    L = ceil(log2 W).  The table satisfies the scaling monotonicity
    mu[v][j] / 2^j >= mu[v][j+1] / 2^{j+1}: doubling the cap can at most
    double the truncated mean.
    """

    scale_count: int
    table: tuple[tuple[Fraction, ...], ...]

    @staticmethod
    def from_instance(inst: CorrKOInstance) -> "TruncatedStats":
        top = log2_ceil(inst.processing_budget)
        table = tuple(
            tuple(truncated_mean(dist, j) for j in range(top + 1)) for dist in inst.dists
        )
        return TruncatedStats(scale_count=top + 1, table=table)

    def mean(self, v: int, j: int) -> Fraction:
        return self.table[v][j]


def split_rewards(inst: CorrKOInstance) -> tuple[CorrKOInstance, CorrKOInstance]:
    """Split an instance into its large-size and small-size reward parts.

    Returns ``(large, small)`` on the same metric and budgets: ``large``
    keeps reward only on atoms with size > floor(W/2), ``small`` keeps the
    complement.  Sizes and probabilities are untouched, so any policy's
    expected reward on ``inst`` is the sum of its rewards on the two parts.
    """
    half = inst.processing_budget // 2

    def mask(dist: JointDistribution, keep_large: bool) -> JointDistribution:
        atoms = tuple(
            Atom(a.size, a.reward if (a.size > half) == keep_large else Fraction(0), a.prob)
            for a in dist.atoms
        )
        return JointDistribution(atoms)

    large = CorrKOInstance(
        inst.metric,
        inst.root,
        inst.travel_budget,
        inst.processing_budget,
        tuple(mask(d, True) for d in inst.dists),
    )
    small = CorrKOInstance(
        inst.metric,
        inst.root,
        inst.travel_budget,
        inst.processing_budget,
        tuple(mask(d, False) for d in inst.dists),
    )
    return large, small


# ---------------------------------------------------------------------------
# Instance file format
#
# line 1: corrko n=<n> B=<travel budget> W=<processing budget> root=<id>
# lines 2..n+1: the n rows of the distance matrix, space separated ints
# final n lines: "<v>: (size, reward_num/reward_den, prob_num/prob_den), ..."
# ---------------------------------------------------------------------------

_HEADER_RE = re.compile(r"^corrko n=(\d+) B=(\d+) W=(\d+) root=(\d+)$")
_ATOM_RE = re.compile(r"^\((-?\d+), (-?\d+)/(\d+), (-?\d+)/(\d+)\)$")


def _format_fraction(x: Fraction) -> str:
    return f"{x.numerator}/{x.denominator}"


def serialize_instance(inst: CorrKOInstance) -> str:
    lines = [
        f"corrko n={inst.n} B={inst.travel_budget} W={inst.processing_budget} root={inst.root}"
    ]
    for row in inst.metric.distances:
        lines.append(" ".join(str(x) for x in row))
    for v, dist in enumerate(inst.dists):
        atoms = ", ".join(
            f"({a.size}, {_format_fraction(a.reward)}, {_format_fraction(a.prob)})"
            for a in dist.atoms
        )
        lines.append(f"{v}: {atoms}")
    return "\n".join(lines) + "\n"


def _split_atom_chunks(body: str) -> list[str]:
    """Split 'a, b), (c, ...' style atom lists on top-level commas."""
    chunks = []
    depth = 0
    current = []
    for ch in body:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise InstanceFormatError("unbalanced parentheses in atom list")
        if ch == "," and depth == 0:
            chunks.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    chunks.append("".join(current).strip())
    if depth != 0:
        raise InstanceFormatError("unbalanced parentheses in atom list")
    return chunks


def parse_instance(text: str) -> CorrKOInstance:
    lines = [line.rstrip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise InstanceFormatError("empty instance file")
    m = _HEADER_RE.match(lines[0])
    if m is None:
        raise InstanceFormatError(f"bad header line: {lines[0]!r}")
    n, travel_budget, processing_budget, root = (int(g) for g in m.groups())
    if len(lines) != 1 + n + n:
        raise InstanceFormatError(
            f"expected {1 + 2 * n} nonblank lines for n={n}, got {len(lines)}"
        )
    rows = []
    for line in lines[1 : 1 + n]:
        parts = line.split()
        if len(parts) != n:
            raise InstanceFormatError(f"distance row has {len(parts)} entries, expected {n}")
        try:
            rows.append(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise InstanceFormatError(f"bad distance entry in row: {line!r}") from exc
    dists = []
    for v, line in enumerate(lines[1 + n :]):
        prefix = f"{v}: "
        if not line.startswith(prefix):
            raise InstanceFormatError(f"expected distribution line for vertex {v}: {line!r}")
        atoms = []
        for chunk in _split_atom_chunks(line[len(prefix) :]):
            am = _ATOM_RE.match(chunk)
            if am is None:
                raise InstanceFormatError(f"bad atom {chunk!r} for vertex {v}")
            size, rn, rd, pn, pd = (int(g) for g in am.groups())
            atoms.append(Atom(size, Fraction(rn, rd), Fraction(pn, pd)))
        try:
            dists.append(JointDistribution(tuple(atoms)))
        except ValueError as exc:
            raise InstanceFormatError(f"invalid distribution for vertex {v}: {exc}") from exc
    try:
        return CorrKOInstance(
            FiniteMetric(tuple(rows)), root, travel_budget, processing_budget, tuple(dists)
        )
    except ValueError as exc:
        raise InstanceFormatError(str(exc)) from exc
