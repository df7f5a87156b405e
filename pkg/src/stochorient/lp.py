"""Linear-programming layer for knapsack orienteering and cancellations.

The module is self-contained on purpose: a dense two-phase simplex solver
over floats, a cutting-plane solver for the knapsack-orienteering
relaxation (subtour rows separated by max-flow), the rounding scheme that
turns a fractional relaxation solution into a feasible path at a constant
factor, and the pseudo-polynomial relaxation used by the cancellation
variant.  Exact rationals stop at this module's boundary: rewards and
weights arrive as ``Fraction`` and are converted to floats, and every
inequality derived from an LP value is checked downstream with explicit
slack rather than exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Callable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .core import CorrKOInstance
from .detsolve import (
    KnapOrientInstance,
    PathInfeasibleError,
    SolveResult,
    SolverCapError,
    _assert_feasible,
    _normalized_knap,
    knap_orient_violations,
    lagrangian_subpath_candidates,
    orienteering_exact,
)

# Solver tolerances: FEAS_TOL drives simplex pivoting decisions, CHECK_TOL
# is the slack used whenever an LP value gates a downstream inequality.
FEAS_TOL = 1e-9
CHECK_TOL = 1e-7

LP_VERTEX_CAP = 10
SUBTOUR_ENUM_CAP = 8
CANCEL_BUDGET_CAP = 256
MAX_CUT_ROUNDS = 50
MAX_PIVOTS = 200_000

# Fractional arc values are scaled to integers for the max-flow separation
# routine so that augmenting-path arithmetic is exact.
FLOW_SCALE = 1 << 31

ROW_SENSES = ("<=", "=", ">=")


class LPRow(NamedTuple):
    coeffs: tuple[float, ...]
    sense: str
    rhs: float


class SimplexOutcome(NamedTuple):
    status: str
    solution: tuple[float, ...]
    objective: float


@dataclass(frozen=True)
class LinearProgram:
    """A finite LP in inequality form with per-variable bounds.

    ``objective`` holds one coefficient per variable; ``maximize`` fixes the
    sense.  Each row is ``(coeffs, sense, rhs)`` with sense drawn from
    ``<=``, ``=``, ``>=``.  ``lower_bounds`` defaults to all zeros and
    ``upper_bounds`` to unbounded.
    """

    maximize: bool
    objective: tuple[float, ...]
    rows: tuple[LPRow, ...]
    lower_bounds: Optional[tuple[float, ...]] = None
    upper_bounds: Optional[tuple[Optional[float], ...]] = None

    def __post_init__(self) -> None:
        obj = tuple(float(c) for c in self.objective)
        if not obj:
            raise ValueError("linear program needs at least one variable")
        if not all(math.isfinite(c) for c in obj):
            raise ValueError("objective coefficients must be finite")
        object.__setattr__(self, "objective", obj)
        n = len(obj)
        rows = []
        for k, row in enumerate(self.rows):
            coeffs, sense, rhs = row
            coeffs = tuple(float(a) for a in coeffs)
            if len(coeffs) != n:
                raise ValueError(
                    f"row {k} has {len(coeffs)} coefficients, expected {n}"
                )
            if not all(math.isfinite(a) for a in coeffs):
                raise ValueError(f"row {k} has a non-finite coefficient")
            if sense not in ROW_SENSES:
                raise ValueError(f"row {k} has unknown sense {sense!r}")
            rhs = float(rhs)
            if not math.isfinite(rhs):
                raise ValueError(f"row {k} has a non-finite right-hand side")
            rows.append(LPRow(coeffs, sense, rhs))
        object.__setattr__(self, "rows", tuple(rows))
        lower = self.lower_bounds
        lower = (0.0,) * n if lower is None else tuple(float(b) for b in lower)
        if len(lower) != n or not all(math.isfinite(b) for b in lower):
            raise ValueError("lower bounds must be finite and one per variable")
        upper = self.upper_bounds
        upper = (None,) * n if upper is None else tuple(
            None if b is None else float(b) for b in upper
        )
        if len(upper) != n:
            raise ValueError("upper bounds must list one entry per variable")
        for lo, up in zip(lower, upper):
            if up is not None and (not math.isfinite(up) or up < lo):
                raise ValueError("upper bounds must be finite and above lower")
        object.__setattr__(self, "lower_bounds", lower)
        object.__setattr__(self, "upper_bounds", upper)

    @property
    def num_variables(self) -> int:
        return len(self.objective)


def lp_row_violations(
    lp: LinearProgram, solution: Sequence[float], tol: float = CHECK_TOL
) -> list[str]:
    """Re-check a solution against every row and bound of ``lp``.

    This is a plain dot-product evaluation, independent of the simplex
    bookkeeping, so it doubles as the post-solve sanity gate.
    """

    if len(solution) != lp.num_variables:
        raise ValueError("solution length does not match the variable count")
    found = []
    vec = np.asarray(solution, dtype=float)
    for i, (lo, up) in enumerate(zip(lp.lower_bounds, lp.upper_bounds)):
        if vec[i] < lo - tol:
            found.append(f"variable {i} below its lower bound: {vec[i]} < {lo}")
        if up is not None and vec[i] > up + tol:
            found.append(f"variable {i} above its upper bound: {vec[i]} > {up}")
    for k, (coeffs, sense, rhs) in enumerate(lp.rows):
        value = float(np.dot(coeffs, vec))
        if sense == "<=" and value > rhs + tol:
            found.append(f"row {k}: {value} exceeds <= {rhs}")
        elif sense == ">=" and value < rhs - tol:
            found.append(f"row {k}: {value} undercuts >= {rhs}")
        elif sense == "=" and abs(value - rhs) > tol:
            found.append(f"row {k}: {value} misses = {rhs}")
    return found


def _apply_pivot(
    tableau: np.ndarray, cost: np.ndarray, basis: list[int], row: int, col: int
) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    cost -= cost[col] * tableau[row]
    # Snap the pivot column to an exact unit vector to stop drift.
    tableau[:, col] = 0.0
    tableau[row, col] = 1.0
    cost[col] = 0.0
    basis[row] = col


def _pivot_loop(
    tableau: np.ndarray,
    cost: np.ndarray,
    basis: list[int],
    allowed: np.ndarray,
) -> str:
    """Run simplex pivots until optimal or unbounded.

    Entering variable: most negative reduced cost (first index on ties);
    after a run of degenerate pivots the rule switches to Bland's
    lowest-index selection, which guarantees termination.
    """

    degenerate_streak = 0
    bland = False
    for _ in range(MAX_PIVOTS):
        reduced = cost[:-1]
        eligible = np.nonzero(allowed & (reduced < -FEAS_TOL))[0]
        if eligible.size == 0:
            return "optimal"
        if bland:
            col = int(eligible[0])
        else:
            col = int(eligible[np.argmin(reduced[eligible])])
        column = tableau[:, col]
        positive = np.nonzero(column > FEAS_TOL)[0]
        if positive.size == 0:
            return "unbounded"
        ratios = tableau[positive, -1] / column[positive]
        best = ratios.min()
        ties = positive[ratios <= best + FEAS_TOL]
        row = int(min(ties, key=lambda i: basis[i]))
        if best < FEAS_TOL:
            degenerate_streak += 1
            if degenerate_streak >= 40:
                bland = True
        else:
            degenerate_streak = 0
        _apply_pivot(tableau, cost, basis, row, col)
    raise RuntimeError("simplex pivot cap exceeded")


def simplex_solve(lp: LinearProgram) -> SimplexOutcome:
    """Solve ``lp`` with a dense two-phase simplex.

    Returns ``(status, solution, objective)`` where status is one of
    ``optimal``, ``infeasible`` or ``unbounded``; the solution tuple is
    empty unless optimal.  Pivoting is deterministic.
    """

    n = lp.num_variables
    lower = np.array(lp.lower_bounds, dtype=float)
    # Work in shifted variables y = x - lower >= 0.
    work_rows: list[tuple[np.ndarray, str, float]] = []
    for coeffs, sense, rhs in lp.rows:
        arr = np.array(coeffs, dtype=float)
        work_rows.append((arr, sense, rhs - float(arr @ lower)))
    for i, up in enumerate(lp.upper_bounds):
        if up is not None:
            unit = np.zeros(n)
            unit[i] = 1.0
            work_rows.append((unit, "<=", up - lower[i]))

    m = len(work_rows)
    slack_count = sum(1 for _, sense, _ in work_rows if sense != "=")
    normalized: list[tuple[np.ndarray, float, int]] = []  # (coeffs, rhs, slack sign)
    for arr, sense, rhs in work_rows:
        sign = 0 if sense == "=" else (1 if sense == "<=" else -1)
        if rhs < 0:
            arr, rhs, sign = -arr, -rhs, -sign
        normalized.append((arr, rhs, sign))

    artificial_rows = [k for k, (_, _, sign) in enumerate(normalized) if sign != 1]
    total = n + slack_count + len(artificial_rows)
    tableau = np.zeros((m, total + 1))
    basis = [-1] * m
    slack_col = n
    art_col = n + slack_count
    artificial_cols: set[int] = set()
    for k, (arr, rhs, sign) in enumerate(normalized):
        tableau[k, :n] = arr
        tableau[k, -1] = rhs
        if sign != 0:
            tableau[k, slack_col] = float(sign)
            if sign == 1:
                basis[k] = slack_col
            slack_col += 1
        if sign != 1:
            tableau[k, art_col] = 1.0
            basis[k] = art_col
            artificial_cols.add(art_col)
            art_col += 1

    structural = np.zeros(total, dtype=bool)
    structural[: n + slack_count] = True

    if artificial_cols:
        cost1 = np.zeros(total + 1)
        for c in artificial_cols:
            cost1[c] = 1.0
        for k in range(m):
            if basis[k] in artificial_cols:
                cost1 -= tableau[k]
                cost1[basis[k]] = 0.0
        status = _pivot_loop(tableau, cost1, basis, np.ones(total, dtype=bool))
        if status != "optimal":
            raise RuntimeError("phase-1 simplex cannot be unbounded")
        residue = sum(
            tableau[k, -1] for k in range(m) if basis[k] in artificial_cols
        )
        if residue > 1e-7:
            return SimplexOutcome("infeasible", (), math.nan)
        # Pivot leftover artificials out of the basis; rows that offer no
        # structural pivot are redundant and get dropped.
        redundant = []
        for k in range(m):
            if basis[k] not in artificial_cols:
                continue
            options = np.nonzero(structural & (np.abs(tableau[k, :-1]) > FEAS_TOL))[0]
            if options.size:
                _apply_pivot(tableau, cost1, basis, k, int(options[0]))
            else:
                redundant.append(k)
        if redundant:
            tableau = np.delete(tableau, redundant, axis=0)
            basis = [b for k, b in enumerate(basis) if k not in set(redundant)]
            m = tableau.shape[0]

    cost2 = np.zeros(total + 1)
    scale = -1.0 if lp.maximize else 1.0
    cost2[:n] = scale * np.array(lp.objective, dtype=float)
    for k in range(m):
        if abs(cost2[basis[k]]) > 0.0:
            cost2 -= cost2[basis[k]] * tableau[k]
            cost2[basis[k]] = 0.0
    status = _pivot_loop(tableau, cost2, basis, structural)
    if status == "unbounded":
        return SimplexOutcome("unbounded", (), math.nan)

    values = np.zeros(total)
    for k in range(m):
        values[basis[k]] = tableau[k, -1]
    solution = values[:n] + lower
    objective = float(np.dot(lp.objective, solution))
    return SimplexOutcome("optimal", tuple(float(v) for v in solution), objective)


def dump_lp(lp: LinearProgram, names: Optional[Sequence[str]] = None) -> str:
    """Render ``lp`` in a plain text LP interchange format."""

    n = lp.num_variables
    if names is None:
        names = [f"x{i}" for i in range(n)]
    if len(names) != n:
        raise ValueError("need one name per variable")

    def terms(coeffs: Sequence[float]) -> str:
        parts = [
            f"{a:+.12g} {names[i]}" for i, a in enumerate(coeffs) if a != 0.0
        ]
        return " ".join(parts) if parts else "0"

    lines = ["Maximize" if lp.maximize else "Minimize"]
    lines.append(f" obj: {terms(lp.objective)}")
    lines.append("Subject To")
    for k, (coeffs, sense, rhs) in enumerate(lp.rows):
        lines.append(f" r{k}: {terms(coeffs)} {sense} {rhs:.12g}")
    lines.append("Bounds")
    for i, (lo, up) in enumerate(zip(lp.lower_bounds, lp.upper_bounds)):
        if up is None:
            lines.append(f" {lo:.12g} <= {names[i]}")
        else:
            lines.append(f" {lo:.12g} <= {names[i]} <= {up:.12g}")
    lines.append("End")
    return "\n".join(lines) + "\n"


# --- orienteering relaxation -------------------------------------------------

_SparseRow = tuple[dict, str, float]


@dataclass(frozen=True)
class _OrientLayout:
    """Column layout shared by the orienteering-style relaxations.

    For every candidate furthest vertex v there is one arc variable per
    ordered pair of distinct vertices, and one visit variable per vertex u
    whose root distance does not exceed that of v.  Visit variables for the
    root itself exist only as the (root, root) pair: the root is on every
    path, so its reward and weight are accounted outside the LP and the
    remaining root-visit variables would otherwise be unconstrained.
    """

    n: int
    root: int
    furthest: tuple[int, ...]
    x_index: dict
    z_index: dict

    @property
    def columns(self) -> int:
        return len(self.x_index) + len(self.z_index)


def _orient_layout(metric, root: int, visitable=None) -> _OrientLayout:
    """Allocate columns, optionally restricted to a visitable vertex set.

    Vertices outside ``visitable`` get no variables at all: no feasible path
    may include them (their knapsack weight alone exceeds the budget), so
    dropping them keeps the program a relaxation while matching the
    discard step the rounding analysis assumes.
    """

    n = metric.n
    usable = sorted(set(range(n)) if visitable is None else set(visitable) | {root})
    x_index: dict = {}
    z_index: dict = {}
    for v in usable:
        for t in usable:
            for h in usable:
                if t != h:
                    x_index[(v, t, h)] = len(x_index)
    offset = len(x_index)
    for v in usable:
        for u in usable:
            if u == root and v != root:
                continue
            if metric.distance(root, u) > metric.distance(root, v):
                continue
            z_index[(v, u)] = offset + len(z_index)
    return _OrientLayout(n, root, tuple(usable), x_index, z_index)


def _orient_base_rows(layout: _OrientLayout, metric, travel_budget: int) -> list[_SparseRow]:
    """Flow, distance-budget and unit rows common to both relaxations."""

    root = layout.root
    usable = layout.furthest
    rows: list[_SparseRow] = []
    for v in usable:
        for u in usable:
            if u == root:
                continue
            coeffs: dict = {}
            for w in usable:
                if w != u:
                    coeffs[layout.x_index[(v, w, u)]] = 1.0
                    coeffs[layout.x_index[(v, u, w)]] = -1.0
            rows.append((coeffs, ">=", 0.0))
    for v in usable:
        coeffs = {}
        for (vv, t, h), col in layout.x_index.items():
            if vv == v:
                coeffs[col] = float(metric.distance(t, h))
        coeffs[layout.z_index[(v, v)]] = -float(travel_budget)
        rows.append((coeffs, "<=", 0.0))
        coeffs = {layout.x_index[(v, root, h)]: 1.0 for h in usable if h != root}
        coeffs[layout.z_index[(v, v)]] = -1.0
        rows.append((coeffs, "=", 0.0))
    rows.append(({layout.z_index[(v, v)]: 1.0 for v in usable}, "=", 1.0))
    return rows


def _subtour_row(layout: _OrientLayout, v: int, inside: frozenset, u: int) -> _SparseRow:
    coeffs: dict = {}
    for w in layout.furthest:
        if w in inside:
            continue
        for s in inside:
            coeffs[layout.x_index[(v, w, s)]] = 1.0
    coeffs[layout.z_index[(v, u)]] = coeffs.get(layout.z_index[(v, u)], 0.0) - 1.0
    return (coeffs, ">=", 0.0)


def _initial_cut_keys(layout: _OrientLayout) -> list[tuple[int, frozenset, int]]:
    """Singleton cuts plus the whole-vertex-set cut for every visit variable.

    The singleton cut forces in-flow at u before z can charge it; the full
    cut bounds every z by the root out-flow, which keeps the relaxation
    bounded even when zero-length arcs exist.
    """

    everything = frozenset(layout.furthest) - {layout.root}
    keys = []
    for (v, u) in layout.z_index:
        if u == layout.root:
            continue
        keys.append((v, frozenset((u,)), u))
        keys.append((v, everything, u))
    return keys


def _min_cut(n: int, caps: list[list[int]], source: int, sink: int) -> tuple[int, frozenset]:
    """Max-flow / min-cut with BFS augmenting paths on integer capacities.

    Returns the flow value and the sink-side vertex set of a minimum cut.
    """

    residual = [row[:] for row in caps]
    flow = 0
    while True:
        parent = [-1] * n
        parent[source] = source
        queue = [source]
        for cur in queue:
            for nxt in range(n):
                if parent[nxt] == -1 and residual[cur][nxt] > 0:
                    parent[nxt] = cur
                    queue.append(nxt)
        if parent[sink] == -1:
            break
        bottleneck = None
        node = sink
        while node != source:
            prev = parent[node]
            cap = residual[prev][node]
            bottleneck = cap if bottleneck is None else min(bottleneck, cap)
            node = prev
        node = sink
        while node != source:
            prev = parent[node]
            residual[prev][node] -= bottleneck
            residual[node][prev] += bottleneck
            node = prev
        flow += bottleneck
    unreachable = frozenset(v for v in range(n) if parent[v] == -1)
    return flow, unreachable


def _separate_subtours(
    layout: _OrientLayout,
    xvals: Mapping,
    zvals: Mapping,
    known: set,
) -> list[tuple[int, frozenset, int]]:
    """Find violated connectivity cuts for the current fractional point."""

    n, root = layout.n, layout.root
    members = frozenset(layout.furthest)
    fresh = []
    active = sorted({v for (v, u), val in zvals.items() if u != root and val > CHECK_TOL})
    for v in active:
        caps = [[0] * n for _ in range(n)]
        for (vv, t, h), val in xvals.items():
            if vv == v and val > 0.0:
                caps[t][h] = round(val * FLOW_SCALE)
        for u in layout.furthest:
            if u == root:
                continue
            demand = zvals.get((v, u), 0.0)
            if demand <= CHECK_TOL:
                continue
            flow, sink_side = _min_cut(n, caps, root, u)
            if flow < (demand - CHECK_TOL) * FLOW_SCALE:
                key = (v, sink_side & members, u)
                if key not in known:
                    fresh.append(key)
    return fresh


def _assemble(
    num_cols: int,
    objective: dict,
    sparse_rows: Sequence[_SparseRow],
    maximize: bool = True,
) -> LinearProgram:
    dense_obj = [0.0] * num_cols
    for col, a in objective.items():
        dense_obj[col] = a
    rows = []
    for coeffs, sense, rhs in sparse_rows:
        dense = [0.0] * num_cols
        for col, a in coeffs.items():
            dense[col] += a
        rows.append(LPRow(tuple(dense), sense, rhs))
    return LinearProgram(maximize, tuple(dense_obj), tuple(rows))


def _extract(
    solution: Sequence[float], index: Mapping, threshold: float = 1e-12
) -> dict:
    return {
        key: float(solution[col])
        for key, col in index.items()
        if abs(solution[col]) > threshold
    }


@dataclass(frozen=True)
class KOLPSolution:
    """Fractional solution of the knapsack-orienteering relaxation.

    ``x`` maps (furthest vertex, arc tail, arc head) to arc values and ``z``
    maps (furthest vertex, vertex) to visit values; missing keys are zero.
    ``objective`` includes the root reward, which the relaxation itself
    carries as a constant.
    """

    root: int
    x: Mapping
    z: Mapping
    objective: float
    cut_rounds: int
    program: Optional[LinearProgram] = None


def solve_kolp(inst: KnapOrientInstance, keep_program: bool = False) -> KOLPSolution:
    """Solve the knapsack-orienteering relaxation by cutting planes.

    Connectivity rows are separated with integer-scaled max-flow: for every
    visit variable above tolerance, a minimum root-to-vertex cut under the
    current arc values either certifies the row family or yields a violated
    cut.  The final solution is re-checked against every generated row.
    """

    if inst.end is not None:
        raise ValueError("the relaxation is defined for rooted instances")
    n = inst.metric.n
    if n > LP_VERTEX_CAP:
        raise SolverCapError(f"relaxation capped at {LP_VERTEX_CAP} vertices, got {n}")
    if n < 2:
        raise ValueError("the relaxation needs at least one non-root vertex")
    root = inst.start
    metric = inst.metric
    visitable = set(range(n))
    if inst.knap_weights is not None:
        weights, budget = _normalized_knap(inst)
        visitable = {u for u in range(n) if weights[u] <= budget}
    if not any(
        metric.distance(root, u) <= inst.length_budget
        for u in visitable
        if u != root
    ):
        raise PathInfeasibleError(
            "no usable non-root vertex lies within the travel budget, so the"
            " relaxation has nowhere to place its unit of path mass"
        )

    layout = _orient_layout(metric, root, visitable)
    rows = _orient_base_rows(layout, metric, inst.length_budget)
    if inst.knap_weights is not None:
        coeffs = {
            col: float(weights[u])
            for (v, u), col in layout.z_index.items()
            if u != root
        }
        rows.append((coeffs, "<=", float(budget)))

    objective = {
        col: float(inst.rewards[u])
        for (v, u), col in layout.z_index.items()
        if u != root
    }
    root_reward = float(inst.rewards[root])

    cut_keys: set = set()
    cut_rows: list[_SparseRow] = []
    for key in _initial_cut_keys(layout):
        cut_keys.add(key)
        cut_rows.append(_subtour_row(layout, *key))

    rounds = 0
    while True:
        program = _assemble(layout.columns, objective, rows + cut_rows)
        status, solution, value = simplex_solve(program)
        if status != "optimal":
            raise RuntimeError(f"relaxation solve unexpectedly {status}")
        xvals = _extract(solution, layout.x_index)
        zvals = _extract(solution, layout.z_index)
        fresh = _separate_subtours(layout, xvals, zvals, cut_keys)
        if not fresh:
            break
        rounds += 1
        if rounds > MAX_CUT_ROUNDS:
            raise RuntimeError(
                f"subtour separation did not converge in {MAX_CUT_ROUNDS} rounds"
            )
        for key in fresh:
            cut_keys.add(key)
            cut_rows.append(_subtour_row(layout, *key))

    bad = lp_row_violations(program, solution)
    if bad:
        raise RuntimeError("solver returned a point violating its own rows: " + bad[0])
    return KOLPSolution(
        root=root,
        x=xvals,
        z=zvals,
        objective=value + root_reward,
        cut_rounds=rounds,
        program=program if keep_program else None,
    )


def kolp_violations(
    inst: KnapOrientInstance, sol: KOLPSolution, tol: float = CHECK_TOL
) -> list[str]:
    """Check a relaxation solution against the constraint families.

    Flow conservation, distance budgets, the unit row, distance dominance,
    nonnegativity and the knapsack row are always checked.  Connectivity is
    checked by full subset enumeration when the instance has at most
    ``SUBTOUR_ENUM_CAP`` vertices, which makes this an oracle for the
    max-flow separation used by the solver.
    """

    n = inst.metric.n
    metric = inst.metric
    root = inst.start
    found = []
    for key, val in list(sol.x.items()) + list(sol.z.items()):
        if val < -tol:
            found.append(f"variable {key} is negative: {val}")

    def xval(v: int, t: int, h: int) -> float:
        return sol.x.get((v, t, h), 0.0)

    def zval(v: int, u: int) -> float:
        return sol.z.get((v, u), 0.0)

    for (v, u), val in sol.z.items():
        if abs(val) <= tol:
            continue
        if u == root and v != root:
            found.append(f"root visit mass stored on pair {(v, u)}")
        if metric.distance(root, u) > metric.distance(root, v):
            found.append(f"distance dominance violated by pair {(v, u)}")
    for v in range(n):
        for u in range(n):
            if u == root:
                continue
            inflow = sum(xval(v, w, u) for w in range(n) if w != u)
            outflow = sum(xval(v, u, w) for w in range(n) if w != u)
            if inflow < outflow - tol:
                found.append(f"flow deficit at vertex {u} for furthest {v}")
        length = sum(
            metric.distance(t, h) * val
            for (vv, t, h), val in sol.x.items()
            if vv == v
        )
        if length > inst.length_budget * zval(v, v) + tol:
            found.append(f"distance budget exceeded for furthest {v}")
        out_root = sum(xval(v, root, h) for h in range(n) if h != root)
        if abs(out_root - zval(v, v)) > tol:
            found.append(f"root out-flow misses the visit mass for furthest {v}")
    unit = sum(zval(v, v) for v in range(n))
    if abs(unit - 1.0) > tol:
        found.append(f"visit masses sum to {unit}, expected 1")
    if inst.knap_weights is not None:
        weights, budget = _normalized_knap(inst)
        load = sum(
            float(weights[u]) * val for (v, u), val in sol.z.items() if u != root
        )
        if load > float(budget) + tol:
            found.append(f"knapsack row violated: {load} > {float(budget)}")
    if n <= SUBTOUR_ENUM_CAP:
        others = [u for u in range(n) if u != root]
        for bits in range(1, 1 << len(others)):
            inside = frozenset(others[i] for i in range(len(others)) if bits >> i & 1)
            for v in range(n):
                incoming = sum(
                    xval(v, w, s) for s in inside for w in range(n) if w not in inside
                )
                for u in inside:
                    if incoming < zval(v, u) - tol:
                        found.append(
                            f"connectivity cut violated for furthest {v},"
                            f" vertex {u}, set {sorted(inside)}"
                        )
    return found


def _decode_integral(inst: KnapOrientInstance, sol: KOLPSolution) -> Optional[tuple[int, ...]]:
    """Recover the path encoded by a 0/1 relaxation solution, if any."""

    values = list(sol.x.values()) + list(sol.z.values())
    if any(min(abs(val), abs(val - 1.0)) > CHECK_TOL for val in values):
        return None
    tops = [v for (v, u), val in sol.z.items() if v == u and val > 0.5]
    if len(tops) != 1:
        return None
    top = tops[0]
    arcs = {(t, h) for (v, t, h), val in sol.x.items() if v == top and val > 0.5}
    path = [inst.start]
    while True:
        nexts = sorted(h for (t, h) in arcs if t == path[-1])
        if not nexts:
            break
        arcs.discard((path[-1], nexts[0]))
        path.append(nexts[0])
    visited = {u for (v, u), val in sol.z.items() if v == top and val > 0.5}
    if not visited <= set(path) or len(set(path)) != len(path):
        return None
    if knap_orient_violations(inst, tuple(path)):
        return None
    return tuple(path)


def round_kolp(
    inst: KnapOrientInstance,
    sol: KOLPSolution,
    orient_solver: Callable[..., SolveResult] = orienteering_exact,
) -> SolveResult:
    """Round a relaxation solution to a feasible path at a constant factor.

    An integral solution is decoded and returned as-is.  Otherwise vertex
    rewards are reduced by a knapsack-weighted charge anchored at the
    relaxation value, ``orient_solver`` handles the knapsack-free problem on
    the reduced rewards, and the resulting path is trimmed to a feasible
    subpath that retains a fifth of the relaxation value.
    """

    if inst.end is not None:
        raise ValueError("rounding is defined for rooted instances")
    if inst.knap_weights is None:
        raise ValueError("rounding expects a knapsack row")
    root = inst.start

    direct = _decode_integral(inst, sol)
    if direct is not None:
        reward = sum(inst.rewards[v] for v in dict.fromkeys(direct))
        return SolveResult(reward, direct)

    weights, budget = _normalized_knap(inst)
    target = sum(
        Fraction(val) * inst.rewards[u] for (v, u), val in sol.z.items() if u != root
    )
    if target <= 0:
        trivial = (root,)
        return SolveResult(inst.rewards[root], trivial)
    lam = Fraction(2, 5)
    scale = lam * target / budget if budget > 0 else Fraction(0)
    reduced = tuple(
        max(Fraction(0), inst.rewards[v] - scale * weights[v])
        for v in range(inst.metric.n)
    )
    allowed = frozenset(
        v for v in range(inst.metric.n) if weights[v] <= budget
    )
    base = replace(inst, rewards=reduced, knap_weights=None, knap_budget=None)
    tau = orient_solver(base, allowed=allowed).path
    _assert_feasible(knap_orient_violations(base, tau), "inner orienteering path")

    candidates = lagrangian_subpath_candidates(
        tau, inst, reduced, lam, target, weights, budget
    )
    candidates.append((root,))
    best = None
    best_reward = Fraction(-1)
    for cand in candidates:
        reward = sum(inst.rewards[v] for v in dict.fromkeys(cand))
        if reward > best_reward:
            best, best_reward = cand, reward
    _assert_feasible(knap_orient_violations(inst, best), "rounded path")
    return SolveResult(best_reward, best)


# --- cancellation relaxation -------------------------------------------------


class CancellationFormError(ValueError):
    """The instance is not in the truncated-reward form the LP requires."""


@dataclass(frozen=True)
class CKOCIndex:
    """Column positions for the cancellation relaxation variables."""

    x: dict
    z: dict
    zt: dict
    st: dict

    @property
    def columns(self) -> int:
        return len(self.x) + len(self.z) + len(self.zt) + len(self.st)


@dataclass(frozen=True)
class CKOCLPSolution:
    """Fractional solution of the cancellation relaxation.

    ``zt[(u, t)]`` is the mass of u being processed for at least t steps and
    ``st[(u, t)]`` the mass of exactly t steps; ``x``/``z`` are the
    orienteering variables as in :class:`KOLPSolution`.
    """

    root: int
    x: Mapping
    z: Mapping
    zt: Mapping
    st: Mapping
    objective: float
    cut_rounds: int
    program: Optional[LinearProgram] = None


def _size_profile(inst: CorrKOInstance, u: int) -> tuple[list, list, list]:
    """Exact per-step size statistics for one vertex.

    Returns ``(survival, point_mass, reward_mass)`` indexed by t in
    0..W with survival[t] = Pr[size >= t]; reward_mass[t] collects
    probability-weighted reward over atoms of size exactly t.
    """

    w = inst.processing_budget
    point = [Fraction(0)] * (w + 1)
    reward = [Fraction(0)] * (w + 1)
    tail = Fraction(0)
    for atom in inst.dists[u].atoms:
        if atom.size <= w:
            point[atom.size] += atom.prob
            reward[atom.size] += atom.prob * atom.reward
        else:
            tail += atom.prob
    survival = [Fraction(0)] * (w + 2)
    survival[w + 1] = tail
    for t in range(w, -1, -1):
        survival[t] = survival[t + 1] + point[t]
    return survival, point, reward


def build_ckoclp(inst: CorrKOInstance) -> tuple[LinearProgram, CKOCIndex]:
    """Build the relaxation for the cancellation variant.

    The instance must be in truncated-reward form: atoms whose size exceeds
    half the processing budget carry zero reward.  The program combines the
    orienteering rows with a per-vertex processing chain: visit mass links
    to the chain head, each step splits into stop-now and continue, stopping
    at step t is forced at the conditional completion rate, and the expected
    processing time is capped by the budget.  Connectivity rows beyond the
    initial cuts are added by :func:`solve_ckoclp`.
    """

    n = inst.n
    if n < 2:
        raise ValueError("the relaxation needs at least one non-root vertex")
    if n > LP_VERTEX_CAP:
        raise SolverCapError(f"relaxation capped at {LP_VERTEX_CAP} vertices, got {n}")
    w = inst.processing_budget
    if w > CANCEL_BUDGET_CAP:
        raise SolverCapError(
            f"pseudo-polynomial relaxation capped at processing budget"
            f" {CANCEL_BUDGET_CAP}, got {w}"
        )
    for u in inst.vertices():
        for atom in inst.dists[u].atoms:
            if 2 * atom.size > w and atom.reward > 0:
                raise CancellationFormError(
                    f"vertex {u} rewards an atom of size {atom.size}, which"
                    f" exceeds half the processing budget {w}"
                )

    root = inst.root
    layout = _orient_layout(inst.metric, root)
    zt_index: dict = {}
    st_index: dict = {}
    offset = layout.columns
    for u in range(n):
        for t in range(w + 1):
            zt_index[(u, t)] = offset + len(zt_index)
    offset += len(zt_index)
    for u in range(n):
        for t in range(w + 1):
            st_index[(u, t)] = offset + len(st_index)
    index = CKOCIndex(layout.x_index, layout.z_index, zt_index, st_index)

    rows = _orient_base_rows(layout, inst.metric, inst.travel_budget)
    objective: dict = {}
    time_cap: dict = {}
    for u in range(n):
        survival, point, reward = _size_profile(inst, u)
        if u == root:
            rows.append(({zt_index[(u, 0)]: 1.0}, "=", 1.0))
        else:
            coeffs = {
                col: 1.0 for (v, uu), col in layout.z_index.items() if uu == u
            }
            coeffs[zt_index[(u, 0)]] = -1.0
            rows.append((coeffs, "=", 0.0))
        for t in range(w + 1):
            coeffs = {zt_index[(u, t)]: 1.0, st_index[(u, t)]: -1.0}
            if t < w:
                coeffs[zt_index[(u, t + 1)]] = -1.0
            rows.append((coeffs, "=", 0.0))
            if survival[t] > 0:
                rate = point[t] / survival[t]
                if rate > 0:
                    rows.append(
                        (
                            {
                                st_index[(u, t)]: 1.0,
                                zt_index[(u, t)]: -float(rate),
                            },
                            ">=",
                            0.0,
                        )
                    )
                if reward[t] > 0:
                    objective[zt_index[(u, t)]] = float(reward[t] / survival[t])
            if t > 0:
                time_cap[st_index[(u, t)]] = float(t)
    rows.append((time_cap, "<=", float(w)))

    for key in _initial_cut_keys(layout):
        rows.append(_subtour_row(layout, *key))
    program = _assemble(index.columns, objective, rows)
    return program, index


def solve_ckoclp(inst: CorrKOInstance, keep_program: bool = False) -> CKOCLPSolution:
    """Solve the cancellation relaxation with the shared separation loop."""

    program, index = build_ckoclp(inst)
    layout = _orient_layout(inst.metric, inst.root)
    objective = {col: a for col, a in enumerate(program.objective) if a != 0.0}
    base_rows = [
        ({i: a for i, a in enumerate(row.coeffs) if a != 0.0}, row.sense, row.rhs)
        for row in program.rows
    ]
    cut_keys = set(_initial_cut_keys(layout))
    cut_rows: list[_SparseRow] = []
    rounds = 0
    while True:
        program = _assemble(index.columns, objective, base_rows + cut_rows)
        status, solution, value = simplex_solve(program)
        if status != "optimal":
            raise RuntimeError(f"relaxation solve unexpectedly {status}")
        xvals = _extract(solution, index.x)
        zvals = _extract(solution, index.z)
        fresh = _separate_subtours(layout, xvals, zvals, cut_keys)
        if not fresh:
            break
        rounds += 1
        if rounds > MAX_CUT_ROUNDS:
            raise RuntimeError(
                f"subtour separation did not converge in {MAX_CUT_ROUNDS} rounds"
            )
        for key in fresh:
            cut_keys.add(key)
            cut_rows.append(_subtour_row(layout, *key))

    bad = lp_row_violations(program, solution)
    if bad:
        raise RuntimeError("solver returned a point violating its own rows: " + bad[0])
    return CKOCLPSolution(
        root=inst.root,
        x=xvals,
        z=zvals,
        zt=_extract(solution, index.zt),
        st=_extract(solution, index.st),
        objective=value,
        cut_rounds=rounds,
        program=program if keep_program else None,
    )


def ckoclp_violations(
    inst: CorrKOInstance, sol: CKOCLPSolution, tol: float = CHECK_TOL
) -> list[str]:
    """Check the processing-chain constraint families of a solution."""

    w = inst.processing_budget
    found = []
    for key, val in list(sol.zt.items()) + list(sol.st.items()):
        if val < -tol:
            found.append(f"chain variable {key} is negative: {val}")

    def zt(u: int, t: int) -> float:
        return sol.zt.get((u, t), 0.0)

    def st(u: int, t: int) -> float:
        return sol.st.get((u, t), 0.0)

    for u in inst.vertices():
        survival, point, _ = _size_profile(inst, u)
        for t in range(w + 1):
            nxt = zt(u, t + 1) if t < w else 0.0
            if abs(zt(u, t) - st(u, t) - nxt) > tol:
                found.append(f"stop/continue split broken at vertex {u}, step {t}")
            if survival[t] > 0:
                rate = float(point[t] / survival[t])
                if st(u, t) < rate * zt(u, t) - tol:
                    found.append(
                        f"conditional stopping rate undercut at vertex {u}, step {t}"
                    )
        if u == inst.root:
            if abs(zt(u, 0) - 1.0) > tol:
                found.append(f"root chain head is {zt(u, 0)}, expected 1")
        else:
            visit = sum(val for (v, uu), val in sol.z.items() if uu == u)
            if abs(visit - zt(u, 0)) > tol:
                found.append(f"visit mass does not link to the chain at vertex {u}")
    spent = sum(t * st(u, t) for u in inst.vertices() for t in range(w + 1))
    if spent > w + tol:
        found.append(f"expected processing time {spent} exceeds the budget {w}")
    return found
