"""Command line front end.

Subcommands: ``gen`` writes generated instances, ``solve`` runs the scale
sweep, ``simulate`` Monte Carlos a stored policy, ``oracle`` computes exact
desk-scale optima behind budget caps, ``csko`` runs the specialized
reduction pipelines, ``report`` renders an experiment spec file, and
``acceptance`` runs the built-in verification suite.

Reports are plain structured text; ``--format rows`` switches to
tab-separated (section, key, value) rows for machine consumption.  Stdout
is byte-for-byte reproducible for a fixed command line and spec; wall-clock
timings go to stderr.  Every policy a subcommand emits is re-validated
against the instance and its claimed exact value before it is written.
Exit codes: 0 success, 1 acceptance criterion failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import functools
import itertools
import json
import math
import os
import random
import sys
import time
from fractions import Fraction
from typing import Callable, NamedTuple, Optional, Sequence

from .adversarial import (
    adaptgap_policy,
    gen_2point,
    gen_adaptgap,
    gen_appendixA,
    gen_bernoulli,
    gen_random,
)
from .core import (
    Atom,
    CorrKOInstance,
    FiniteMetric,
    InstanceFormatError,
    JointDistribution,
    log2_ceil,
    parse_instance,
    serialize_instance,
    split_rewards,
)
from .csko import (
    bernoulli_csko,
    cancel_pipeline,
    ck_restricted_violations,
    csko_round,
    decompose_difficult,
    extract_structure,
    heavy_branch_policy,
    okd_to_tcsko,
    poly_logW,
    portal_violations,
    solve_config_lp,
    tcsko_to_okd,
    truncated_branch_policy,
    two_point_path_value,
    window_instance,
    TwoPointFormError,
)
from .detsolve import (
    KnapOrientInstance,
    OrientKDInstance,
    PathInfeasibleError,
    deadline_buckets,
    extract_okd_portals,
    knap_okd_exact,
    knap_orient_exact,
    lagrangian_knap_reduce,
    orienteering_exact,
    orientkd_bucketing,
    orientkd_exact,
    orientkd_portal_alg,
    orientkd_violations,
)
from .lp import round_kolp, solve_ckoclp, solve_kolp
from .oracle import (
    OracleBudgetCaps,
    OracleBudgetError,
    opt_adaptive,
    opt_cancellation_bruteforce,
    opt_fixed_order,
    opt_nonadaptive,
    opt_nonadaptive_restricted,
)
from .policy import (
    AdaptivePolicyTree,
    CancellationPolicy,
    NonAdaptivePolicy,
    eval_adaptive_exact,
    eval_cancellation_exact,
    eval_nonadaptive_exact,
    parse_policy,
    serialize_policy,
    simulate,
    validate_policy,
)

# Rational bracket for e^{-1}: the upper bound makes lower-bound checks
# conservative, the complement 1 - 2432/6610 likewise for 1 - e^{-1}.
INV_E_UPPER = Fraction(2432, 6610)
# Rational lower bound for 1 - e^{-1/2}, used by the two-point reduction.
HALF_SURVIVAL_LOWER = Fraction(1967, 5000)
LP_SLACK = 1e-6

ENV_CAPS = (
    ("STOCHORIENT_MAX_VERTICES", "max_vertices"),
    ("STOCHORIENT_MAX_PROCESSING", "max_processing_budget"),
    ("STOCHORIENT_MAX_STATES", "max_states"),
)
CAP_ALIASES = {
    "vertices": "max_vertices",
    "processing": "max_processing_budget",
    "states": "max_states",
}


class UsageError(Exception):
    """Bad invocation or malformed input; the message carries a remedy."""


def resolve_caps(spec: Optional[str]) -> OracleBudgetCaps:
    """Oracle budget caps from defaults, environment, then the --caps flag.

    The flag syntax is ``vertices=V,processing=W,states=S`` with any subset
    of the three keys; the environment variables STOCHORIENT_MAX_VERTICES,
    STOCHORIENT_MAX_PROCESSING, and STOCHORIENT_MAX_STATES override the
    defaults and are themselves overridden by the flag.
    """
    values = {
        "max_vertices": OracleBudgetCaps.max_vertices,
        "max_processing_budget": OracleBudgetCaps.max_processing_budget,
        "max_states": OracleBudgetCaps.max_states,
    }
    for env_name, field in ENV_CAPS:
        raw = os.environ.get(env_name)
        if raw is None:
            continue
        try:
            values[field] = int(raw)
        except ValueError:
            raise UsageError(
                f"environment variable {env_name} must be an integer, got {raw!r}"
            )
    if spec:
        for chunk in spec.split(","):
            if "=" not in chunk:
                raise UsageError(
                    f"bad caps entry {chunk!r}; use vertices=V,processing=W,states=S"
                )
            key, _, raw = chunk.partition("=")
            field = CAP_ALIASES.get(key.strip())
            if field is None:
                raise UsageError(
                    f"unknown caps key {key.strip()!r}; valid keys: vertices, processing, states"
                )
            try:
                values[field] = int(raw)
            except ValueError:
                raise UsageError(f"caps value for {key.strip()} must be an integer")
    return OracleBudgetCaps(**values)


# ---------------------------------------------------------------------------
# Report rendering.


def _value_str(value) -> str:
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return " ".join(_value_str(v) for v in value)
    return str(value)


def _approx_str(value) -> Optional[str]:
    if isinstance(value, Fraction) and value.denominator != 1:
        try:
            return f"{float(value):.6f}"
        except OverflowError:
            return None
    return None


class ReportBuilder:
    """Ordered (section, key, value) entries with two renderers.

    Text mode prints one header per section change and indented
    ``key = value`` lines, with a six-decimal approximation appended to
    non-integer fractions.  Rows mode emits one tab-separated line per
    entry.  Both renderings are pure functions of the recorded values.
    """

    def __init__(self) -> None:
        self._rows: list[tuple[str, str, str, str]] = []
        self._section = "report"

    def section(self, name: str) -> None:
        self._section = name

    def put(self, key: str, value) -> None:
        approx = _approx_str(value)
        self._rows.append((self._section, "kv", key, _value_str(value)))
        if approx is not None:
            self._rows[-1] = (self._section, "kv~" + approx, key, _value_str(value))

    def check(self, name: str, ok: bool) -> None:
        self._rows.append((self._section, "check", name, "PASS" if ok else "FAIL"))

    def block(self, key: str, text: str) -> None:
        self._rows.append((self._section, "block", key, text))

    def note(self, text: str) -> None:
        self._rows.append((self._section, "note", "", text))

    def all_checks_pass(self) -> bool:
        return all(v == "PASS" for _, kind, _, v in self._rows if kind == "check")

    def render(self, fmt: str) -> str:
        if fmt == "rows":
            out = []
            for section, kind, key, value in self._rows:
                if kind == "check":
                    out.append(f"{section}\tcheck:{key}\t{value}")
                elif kind == "note":
                    out.append(f"{section}\tnote\t{value}")
                elif kind == "block":
                    out.append(f"{section}\t{key}\t" + value.replace("\n", "\\n"))
                else:
                    out.append(f"{section}\t{key}\t{value}")
            return "\n".join(out) + "\n"
        out = []
        current = None
        for section, kind, key, value in self._rows:
            if section != current:
                if current is not None:
                    out.append("")
                out.append(f"== {section} ==")
                current = section
            if kind == "check":
                out.append(f"  [{value}] {key}")
            elif kind == "note":
                out.append(f"  {value}")
            elif kind == "block":
                out.append(f"  {key}:")
                for line in value.rstrip("\n").split("\n"):
                    out.append(f"    {line}")
            elif kind.startswith("kv~"):
                out.append(f"  {key} = {value} (~{kind[3:]})")
            else:
                out.append(f"  {key} = {value}")
        return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# File plumbing.


def _read_text(path: str, what: str) -> str:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {what} file {path!r}: {exc}")


def _read_instance(path: str) -> CorrKOInstance:
    text = _read_text(path, "instance")
    try:
        return parse_instance(text)
    except InstanceFormatError as exc:
        raise UsageError(
            f"instance file {path!r} is malformed ({exc}); "
            "write one with 'stochorient gen'"
        )


def _read_policy(path: str):
    text = _read_text(path, "policy")
    try:
        return parse_policy(text)
    except InstanceFormatError as exc:
        raise UsageError(
            f"policy file {path!r} is malformed ({exc}); "
            "write one with 'stochorient solve --policy-out'"
        )


def _write_output(text: str, path: Optional[str]) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise UsageError(f"cannot write output file {path!r}: {exc}")
    print(f"wrote {path}", file=sys.stderr)


def _certify_policy(inst: CorrKOInstance, policy, claimed: Optional[Fraction]) -> Fraction:
    """Re-validate an outgoing policy and its claimed exact value.

    Every policy the CLI prints or stores passes through here first; a
    value mismatch means an algorithm bug, not bad input, so it raises
    RuntimeError rather than UsageError.
    """
    validate_policy(inst, policy)
    if isinstance(policy, NonAdaptivePolicy):
        value = eval_nonadaptive_exact(inst, policy)
    elif isinstance(policy, AdaptivePolicyTree):
        value = eval_adaptive_exact(inst, policy)
    elif isinstance(policy, CancellationPolicy):
        value = eval_cancellation_exact(inst, policy)
    else:
        raise RuntimeError(f"unknown policy type {type(policy).__name__}")
    if claimed is not None and value != claimed:
        raise RuntimeError(
            f"policy value recheck failed: claimed {claimed}, evaluator says {value}"
        )
    return value


def _instance_summary(rb: ReportBuilder, inst: CorrKOInstance) -> None:
    rb.section("instance")
    rb.put("vertices", inst.n)
    rb.put("root", inst.root)
    rb.put("travel budget", inst.travel_budget)
    rb.put("processing budget", inst.processing_budget)
    rb.put("atoms", sum(len(d.atoms) for d in inst.dists))


# ---------------------------------------------------------------------------
# gen / solve / simulate / oracle / csko subcommands.


def _require_seed(seed: Optional[int], why: str) -> int:
    if seed is None:
        raise UsageError(f"{why} is randomized; pass --seed")
    return seed


def cmd_gen(args) -> int:
    fam = args.family
    processing = args.processing
    if processing is None:
        processing = (1 << (args.items + 1)) + 1 if fam == "appendix" else 8
    try:
        if fam == "random":
            inst = gen_random(
                args.n,
                args.travel,
                processing,
                args.atoms,
                seed=_require_seed(args.seed, "the random generator"),
            )
        elif fam == "adaptgap":
            inst = gen_adaptgap(args.height)
        elif fam == "appendix":
            inst = gen_appendixA(args.items, processing)
        elif fam == "twopoint":
            inst = gen_2point(
                args.n,
                args.travel,
                processing,
                seed=_require_seed(args.seed, "the two-point generator"),
            )
        elif fam == "bernoulli":
            inst = gen_bernoulli(
                args.n,
                args.travel,
                processing,
                seed=_require_seed(args.seed, "the Bernoulli generator"),
            )
        else:
            raise UsageError(f"unknown generator family {fam!r}")
    except ValueError as exc:
        raise UsageError(f"generator {fam} rejected its parameters: {exc}")
    _write_output(serialize_instance(inst), args.out)
    return 0


def cmd_solve(args) -> int:
    inst = _read_instance(args.instance)
    seed = args.seed
    if args.mode == "randomized":
        seed = _require_seed(seed, "randomized thinning")
    res = poly_logW(
        inst, mode=args.mode, solver=args.solver, seed=seed, samples=args.samples
    )
    _certify_policy(inst, res.policy, res.value)
    rb = ReportBuilder()
    _instance_summary(rb, inst)
    rb.section("scale sweep")
    rb.put("mode", res.mode)
    rb.put("inner solver", res.solver)
    rb.put("best window", res.best_window)
    rb.put("window count", len(res.window_values))
    rb.put("policy value", res.value)
    rb.put("expected value", res.expected_value)
    rb.put("expectation exact", res.exact_expectation)
    rb.put("base path", res.base_path)
    rb.block("policy", serialize_policy(res.policy))
    _write_output(rb.render(args.format), args.out)
    if args.policy_out:
        _write_output(serialize_policy(res.policy), args.policy_out)
    return 0


def cmd_simulate(args) -> int:
    inst = _read_instance(args.instance)
    policy = _read_policy(args.policy)
    try:
        validate_policy(inst, policy)
    except Exception as exc:
        raise UsageError(f"policy does not fit the instance: {exc}")
    seed = _require_seed(args.seed, "simulation")
    res = simulate(inst, policy, args.trials, seed)
    rb = ReportBuilder()
    _instance_summary(rb, inst)
    rb.section("simulation")
    rb.put("trials", res.trials)
    rb.put("seed", seed)
    rb.put("mean", res.mean)
    rb.put("stdev", res.stdev)
    rb.put("ci95 low", res.ci95[0])
    rb.put("ci95 high", res.ci95[1])
    _write_output(rb.render(args.format), args.out)
    return 0


def _caps_hint(exc: OracleBudgetError) -> UsageError:
    return UsageError(
        f"{exc}; raise the caps with --caps vertices=V,processing=W,states=S "
        "or the STOCHORIENT_MAX_* environment variables"
    )


def cmd_oracle(args) -> int:
    inst = _read_instance(args.instance)
    caps = resolve_caps(args.caps)
    rb = ReportBuilder()
    _instance_summary(rb, inst)
    rb.section("oracle")
    try:
        if args.what == "adaptive":
            res = opt_adaptive(inst, caps)
            _certify_policy(inst, res.tree, res.value)
            rb.put("adaptive optimum", res.value)
            rb.block("tree", serialize_policy(res.tree))
        elif args.what == "nonadaptive":
            res = opt_nonadaptive(inst, caps)
            _certify_policy(inst, res.policy, res.value)
            rb.put("nonadaptive optimum", res.value)
            rb.put("sequence", res.policy.sequence)
        elif args.what == "gap":
            ada = opt_adaptive(inst, caps)
            non = opt_nonadaptive(inst, caps)
            rb.put("adaptive optimum", ada.value)
            rb.put("nonadaptive optimum", non.value)
            if non.value:
                rb.put("adaptivity gap", ada.value / non.value)
            else:
                rb.put("adaptivity gap", "inf" if ada.value else 1)
        elif args.what == "cancellation":
            res = opt_cancellation_bruteforce(inst, caps)
            _certify_policy(inst, res.policy, res.value)
            rb.put("cancellation optimum", res.value)
            rb.put("sequence", res.policy.sequence)
        elif args.what == "fixed-order":
            if not args.order:
                raise UsageError(
                    "--what fixed-order needs --order with comma-separated non-root vertices"
                )
            try:
                order = tuple(int(x) for x in args.order.split(","))
            except ValueError:
                raise UsageError(f"bad --order {args.order!r}; expected e.g. 2,1,3")
            rb.put("order", order)
            rb.put("fixed-order optimum", opt_fixed_order(inst, order))
        else:
            raise UsageError(f"unknown oracle selector {args.what!r}")
    except OracleBudgetError as exc:
        raise _caps_hint(exc)
    _write_output(rb.render(args.format), args.out)
    return 0


def cmd_csko(args) -> int:
    inst = _read_instance(args.instance)
    rb = ReportBuilder()
    _instance_summary(rb, inst)
    alg = args.algorithm
    seed = args.seed
    if alg == "bernoulli":
        if args.mode == "sampled":
            seed = _require_seed(seed, "branch sampling")
        try:
            res = bernoulli_csko(inst, mode=args.mode, solver=args.solver, seed=seed)
        except ValueError as exc:
            raise UsageError(
                f"{exc}; the bernoulli pipeline needs at most one positive job "
                "size per vertex (try 'stochorient gen bernoulli')"
            )
        _certify_policy(inst, res.policy, res.value)
        rb.section("bernoulli pipeline")
        rb.put("mode", res.mode)
        rb.put("branch", res.branch)
        rb.put("branch values", res.branch_values)
        rb.put("mixing weights", res.betas)
        rb.put("guarantee divisor", res.constant)
        rb.put("mixture value", res.mixture_value)
        rb.put("policy value", res.value)
        rb.put("sequence", res.policy.sequence)
    elif alg == "cancel":
        if args.mode == "sampled":
            seed = _require_seed(seed, "branch sampling")
        res = cancel_pipeline(inst, mode=args.mode, seed=seed)
        _certify_policy(inst, res.policy, res.value)
        rb.section("cancellation pipeline")
        rb.put("branch", res.branch)
        rb.put("relaxation objective", res.lp_objective)
        rb.put("rounded path", res.path)
        rb.put("induced path reward", res.path_reward)
        rb.put("threshold scheme value", res.scheme_value)
        rb.put("threshold search value", res.search_value)
        rb.put("policy value", res.value)
        rb.put("sequence", res.policy.sequence)
    elif alg == "twopoint":
        try:
            okd = tcsko_to_okd(inst)
        except TwoPointFormError as exc:
            raise UsageError(
                f"{exc}; the two-point route needs canonical two-point distributions "
                "(try 'stochorient gen twopoint')"
            )
        sol = knap_okd_exact(okd)
        value = two_point_path_value(inst, sol.path)
        policy = NonAdaptivePolicy(sol.path)
        _certify_policy(inst, policy, value)
        rb.section("two-point reduction")
        rb.put("deadline instance reward", sol.reward)
        rb.put("sequence", sol.path)
        rb.put("policy value", value)
    elif alg == "split":
        parts = decompose_difficult(inst)
        tb = truncated_branch_policy(parts.truncated, seed=seed)
        hb = heavy_branch_policy(parts.large_heavy, vertices=parts.heavy_vertices)
        tb_full = _certify_policy(inst, tb.policy, None)
        hb_full = _certify_policy(inst, hb.policy, None)
        rb.section("reward split")
        rb.put("heavy vertices", parts.heavy_vertices)
        rb.put("mixing weights", parts.betas)
        rb.put("truncated branch value", tb.value)
        rb.put("heavy branch value", hb.value)
        rb.note("the light-large branch needs the two-point route; not solved here")
        rb.section("best branch policy")
        if tb_full >= hb_full:
            rb.put("branch", "truncated")
            rb.put("value on full instance", tb_full)
            rb.put("sequence", tb.policy.sequence)
        else:
            rb.put("branch", "heavy")
            rb.put("value on full instance", hb_full)
            rb.put("sequence", hb.policy.sequence)
    else:
        raise UsageError(f"unknown csko algorithm {alg!r}")
    _write_output(rb.render(args.format), args.out)
    return 0


# ---------------------------------------------------------------------------
# Experiment specs and the report subcommand.


GENERATOR_PARAMS = {
    "random": ("n", "travel", "processing", "atoms", "seed"),
    "adaptgap": ("height",),
    "appendix": ("items", "processing"),
    "twopoint": ("n", "travel", "processing", "seed"),
    "bernoulli": ("n", "travel", "processing", "seed"),
}


def _instance_from_source(source) -> CorrKOInstance:
    if not isinstance(source, dict):
        raise UsageError(
            'spec field "instance" must be an object with "file" or "generator"'
        )
    if "file" in source:
        return _read_instance(source["file"])
    name = source.get("generator")
    if name not in GENERATOR_PARAMS:
        raise UsageError(
            f"unknown generator {name!r}; valid: {', '.join(sorted(GENERATOR_PARAMS))}"
        )
    params = source.get("params", {})
    allowed = GENERATOR_PARAMS[name]
    for key in params:
        if key not in allowed:
            raise UsageError(
                f"generator {name} does not take parameter {key!r}; valid: {', '.join(allowed)}"
            )
    try:
        if name == "random":
            return gen_random(
                params["n"], params["travel"], params["processing"],
                params.get("atoms", 3), seed=params["seed"],
            )
        if name == "adaptgap":
            return gen_adaptgap(params["height"])
        if name == "appendix":
            items = params["items"]
            return gen_appendixA(items, params.get("processing", (1 << (items + 1)) + 1))
        if name == "twopoint":
            return gen_2point(
                params["n"], params["travel"], params["processing"], seed=params["seed"]
            )
        return gen_bernoulli(
            params["n"], params["travel"], params["processing"], seed=params["seed"]
        )
    except KeyError as exc:
        raise UsageError(f"generator {name} needs parameter {exc.args[0]!r}")
    except ValueError as exc:
        raise UsageError(f"generator {name} rejected its parameters: {exc}")


def _load_spec(path: str) -> dict:
    text = _read_text(path, "experiment spec")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"experiment spec {path!r} is not valid JSON: {exc}")
    if not isinstance(data, dict):
        raise UsageError("experiment spec must be a JSON object")
    for field in ("id", "experiment", "instance"):
        if field not in data:
            raise UsageError(f'experiment spec is missing the "{field}" field')
    return data


def _adaptgap_family_caps(inst: CorrKOInstance, caps: OracleBudgetCaps) -> OracleBudgetCaps:
    """Caps widened to admit the structured gap family.

    The family has a huge processing budget on paper but few reachable
    elapsed values, so admitting it is safe; the state cap still guards
    the search.
    """
    return OracleBudgetCaps(
        max_vertices=max(caps.max_vertices, inst.n),
        max_processing_budget=max(caps.max_processing_budget, inst.processing_budget),
        max_states=max(caps.max_states, 50_000_000),
    )


def run_experiment(spec: dict, caps: OracleBudgetCaps) -> ReportBuilder:
    """Execute one experiment spec into a report.

    The report is a pure function of the spec and the package version:
    randomized steps draw only from seeds named in the spec, and wall
    clock never enters the output.
    """
    rb = ReportBuilder()
    rb.section("experiment")
    rb.put("id", spec["id"])
    rb.put("experiment", spec["experiment"])
    inst = _instance_from_source(spec["instance"])
    _instance_summary(rb, inst)
    kind = spec["experiment"]
    trials = spec.get("trials", 0)
    seed = spec.get("seed")
    if trials and seed is None:
        raise UsageError("spec selects Monte Carlo trials; add a seed field")

    if kind == "adaptivity-gap":
        height = spec["instance"].get("params", {}).get("height")
        pol = adaptgap_policy(inst)
        value = eval_adaptive_exact(inst, pol)
        _certify_policy(inst, pol, value)
        rb.section("adaptivity gap")
        rb.put("adaptive walker value", value)
        lower = (1 - INV_E_UPPER) / 4
        rb.put("adaptive reference floor", lower)
        rb.check("adaptive walker clears the floor", value >= lower)
        family_caps = _adaptgap_family_caps(inst, caps)
        if height == 4:
            non = opt_nonadaptive(inst, family_caps)
            label = "nonadaptive optimum"
        else:
            non = opt_nonadaptive_restricted(inst)
            label = "nonadaptive optimum (restricted search)"
        rb.put(label, non.value)
        if height is not None:
            ceiling = Fraction(2) / int(math.isqrt(height))
            rb.put("nonadaptive reference ceiling", ceiling)
            rb.check("nonadaptive search under the ceiling", non.value <= ceiling)
        if non.value:
            rb.put("realized gap", value / non.value)
    elif kind == "appendix-order":
        items = inst.n - 1
        forward = tuple(range(1, inst.n))
        forced = opt_fixed_order(inst, forward)
        reverse = opt_fixed_order(inst, tuple(reversed(forward)))
        rb.section("order sensitivity")
        rb.put("forced order value", forced)
        rb.put("forced reference ceiling", Fraction(1, items))
        rb.check("forced order capped", forced <= Fraction(1, items))
        rb.put("reverse order value", reverse)
        rb.put("reverse reference floor", 1 - INV_E_UPPER)
        rb.check("reverse order clears the floor", reverse >= 1 - INV_E_UPPER)
    elif kind == "scale-sweep":
        mode = spec.get("mode", "derandomize")
        if mode == "randomized" and seed is None:
            raise UsageError("spec selects randomized thinning; add a seed field")
        res = poly_logW(inst, mode=mode, solver=spec.get("solver", "lp"), seed=seed)
        _certify_policy(inst, res.policy, res.value)
        rb.section("scale sweep")
        rb.put("mode", res.mode)
        rb.put("best window", res.best_window)
        rb.put("policy value", res.value)
        rb.put("expected value", res.expected_value)
        rb.put("sequence", res.policy.sequence)
        if trials:
            sim = simulate(inst, res.policy, trials, seed)
            rb.section("monte carlo")
            rb.put("trials", sim.trials)
            rb.put("mean", sim.mean)
            rb.put("stdev", sim.stdev)
            rb.put("ci95 low", sim.ci95[0])
            rb.put("ci95 high", sim.ci95[1])
        rb.section("oracle comparison")
        try:
            opt = opt_adaptive(inst, caps)
            rb.put("adaptive optimum", opt.value)
            scales = log2_ceil(inst.processing_budget)
            floor = opt.value / (40 * (scales + 1))
            rb.put("guarantee floor", floor)
            rb.check("expected value clears the floor", res.expected_value >= floor)
            if res.value:
                rb.put("realized factor", opt.value / res.value)
        except OracleBudgetError as exc:
            rb.note(f"oracle skipped (caps): {exc}")
    elif kind == "bernoulli":
        mode = spec.get("mode", "best")
        if mode == "sampled" and seed is None:
            raise UsageError("spec selects branch sampling; add a seed field")
        res = bernoulli_csko(inst, mode=mode, solver=spec.get("solver", "exact"), seed=seed)
        _certify_policy(inst, res.policy, res.value)
        rb.section("bernoulli pipeline")
        rb.put("branch", res.branch)
        rb.put("mixture value", res.mixture_value)
        rb.put("guarantee divisor", res.constant)
        rb.put("policy value", res.value)
        rb.section("oracle comparison")
        try:
            opt = opt_adaptive(inst, caps)
            rb.put("adaptive optimum", opt.value)
            rb.check(
                "mixture clears opt over divisor",
                res.mixture_value >= opt.value / res.constant,
            )
        except OracleBudgetError as exc:
            rb.note(f"oracle skipped (caps): {exc}")
    elif kind == "cancel":
        mode = spec.get("mode", "best")
        if mode == "sampled" and seed is None:
            raise UsageError("spec selects branch sampling; add a seed field")
        res = cancel_pipeline(inst, mode=mode, seed=seed)
        _certify_policy(inst, res.policy, res.value)
        rb.section("cancellation pipeline")
        rb.put("relaxation objective", res.lp_objective)
        rb.put("induced path reward", res.path_reward)
        rb.put("threshold search value", res.search_value)
        rb.put("policy value", res.value)
        rb.check("search clears an eighth of the path reward",
                 res.search_value >= res.path_reward / 8)
        rb.section("oracle comparison")
        try:
            opt = opt_cancellation_bruteforce(inst, caps)
            rb.put("cancellation optimum", opt.value)
            rb.check("policy value within the optimum", res.value <= opt.value)
        except OracleBudgetError as exc:
            rb.note(f"oracle skipped (caps): {exc}")
    else:
        raise UsageError(
            f"unknown experiment {kind!r}; valid: adaptivity-gap, appendix-order, "
            "scale-sweep, bernoulli, cancel"
        )
    return rb


def cmd_report(args) -> int:
    spec = _load_spec(args.spec)
    caps = resolve_caps(args.caps)
    try:
        rb = run_experiment(spec, caps)
    except OracleBudgetError as exc:
        raise _caps_hint(exc)
    out = args.out if args.out is not None else spec.get("out")
    _write_output(rb.render(args.format), out)
    return 0


# ---------------------------------------------------------------------------
# Acceptance fixtures.


def _knap_fixture(seed: int, max_n: int) -> KnapOrientInstance:
    """Random rooted knapsack-orienteering instance on an L1 grid."""
    rng = random.Random(f"knap:{seed}")
    n = 3 + seed % (max_n - 2)
    pts = [(rng.randint(0, 3), rng.randint(0, 3)) for _ in range(n)]
    rows = [
        [abs(p[0] - q[0]) + abs(p[1] - q[1]) for q in pts] for p in pts
    ]
    rewards = tuple(Fraction(rng.randint(0, 8)) for _ in range(n))
    weights = (Fraction(0),) + tuple(Fraction(rng.randint(0, 4)) for _ in range(n - 1))
    return KnapOrientInstance(
        metric=FiniteMetric.from_rows(rows),
        start=0,
        end=None,
        length_budget=rng.randint(2, 10),
        rewards=rewards,
        knap_weights=weights,
        knap_budget=Fraction(rng.randint(1, 8)),
    )


def _orientkd_fixture(seed: int) -> OrientKDInstance:
    """Random deadline-orienteering instance on an L1 grid."""
    rng = random.Random(f"okd:{seed}")
    n = 4 + seed % 3
    pts = [(rng.randint(0, 3), rng.randint(0, 3)) for _ in range(n)]
    rows = [
        [abs(p[0] - q[0]) + abs(p[1] - q[1]) for q in pts] for p in pts
    ]
    return OrientKDInstance(
        metric=FiniteMetric.from_rows(rows),
        root=0,
        length_budget=rng.randint(2, 8),
        rewards=tuple(Fraction(rng.randint(0, 6)) for _ in range(n)),
        weights=(0,) + tuple(rng.randint(0, 3) for _ in range(n - 1)),
        deadlines=tuple(rng.randint(0, 8) for _ in range(n)),
    )


def _balanced_fixture(seed: int) -> CorrKOInstance:
    """Clustered instance whose reward is spread over many vertices.

    Near-equal rewards, small sizes, and a roomy travel budget keep any
    single vertex below a quarter of the optimum, which is the regime the
    structural reward properties are stated for.
    """
    rng = random.Random(f"balanced:{seed}")
    n = 6
    pts = [(0, 0)] + [(rng.randint(0, 1), rng.randint(0, 1)) for _ in range(n - 1)]
    rows = [
        [abs(p[0] - q[0]) + abs(p[1] - q[1]) for q in pts] for p in pts
    ]
    dists = [JointDistribution.point()]
    for _ in range(n - 1):
        reward = Fraction(rng.randint(16, 20), 2)
        hi = 2 if rng.random() < 0.3 else 1
        p = Fraction(rng.randint(1, 3), 4)
        dists.append(
            JointDistribution(
                (Atom(hi, reward, p), Atom(rng.randint(0, 1), reward, 1 - p))
            )
        )
    return CorrKOInstance(FiniteMetric.from_rows(rows), 0, 12, 8, tuple(dists))


@functools.lru_cache(maxsize=4)
def _structure_pool(count: int):
    """First ``count`` balanced fixtures whose certificates carry rewards.

    Each entry is (seed, instance, adaptive optimum, structure) with the
    structure certified, reward-checked, and owning at least one portal
    pair, so both the property checks and the configuration relaxation
    have something to chew on.
    """
    pool = []
    seed = 0
    while len(pool) < count:
        if seed >= 2000:
            raise RuntimeError(
                f"only {len(pool)} of {count} balanced fixtures qualified"
            )
        inst = _balanced_fixture(seed)
        seed += 1
        opt = opt_adaptive(inst)
        if opt.value == 0:
            continue
        st = extract_structure(inst, opt.tree)
        if not st.reward_checked or not st.pairs:
            continue
        pool.append((seed - 1, inst, opt, st))
    return tuple(pool)


# ---------------------------------------------------------------------------
# Acceptance criteria.


class CriterionResult(NamedTuple):
    passed: bool
    notes: tuple[str, ...]


def _crit_adaptive_floor() -> CriterionResult:
    inst = gen_adaptgap(4)
    value = eval_adaptive_exact(inst, adaptgap_policy(inst))
    floor = (1 - INV_E_UPPER) / 4
    return CriterionResult(
        value >= floor,
        (f"walker value = {value}", f"floor = {floor}"),
    )


def _crit_nonadaptive_ceiling() -> CriterionResult:
    inst4 = gen_adaptgap(4)
    caps = _adaptgap_family_caps(inst4, OracleBudgetCaps())
    non4 = opt_nonadaptive(inst4, caps).value
    ada4 = eval_adaptive_exact(inst4, adaptgap_policy(inst4))
    ok_ceiling = non4 <= 1
    ratio4 = ada4 / non4
    inst9 = gen_adaptgap(9)
    non9 = opt_nonadaptive_restricted(inst9).value
    ada9 = eval_adaptive_exact(inst9, adaptgap_policy(inst9))
    ratio9 = ada9 / non9
    ok_growth = ratio9 > ratio4
    return CriterionResult(
        ok_ceiling and ok_growth,
        (
            f"height-4 nonadaptive = {non4} (ceiling 1)",
            f"height-4 gap = {ratio4}",
            f"height-9 restricted gap = {ratio9}",
        ),
    )


def _crit_order_sensitivity() -> CriterionResult:
    notes = []
    ok = True
    for items in (2, 6):
        processing = (1 << (items + 1)) + 1
        inst = gen_appendixA(items, processing)
        forward = tuple(range(1, items + 1))
        forced = opt_fixed_order(inst, forward)
        reverse = opt_fixed_order(inst, tuple(reversed(forward)))
        ok = ok and forced <= Fraction(1, items) and reverse >= 1 - INV_E_UPPER
        notes.append(f"n={items}: forced = {forced}, reverse = {reverse}")
    notes.append(f"reverse floor = {1 - INV_E_UPPER}")
    return CriterionResult(ok, tuple(notes))


def _crit_lagrangian_factor() -> CriterionResult:
    worst = None
    bound = Fraction(100, 303)
    for seed in range(200):
        inst = _knap_fixture(seed, max_n=7)
        opt = knap_orient_exact(inst)
        got = lagrangian_knap_reduce(orienteering_exact, Fraction(1), inst)
        if got.reward < opt.reward * bound:
            return CriterionResult(
                False,
                (f"seed {seed}: reward {got.reward} under {opt.reward} * {bound}",),
            )
        if opt.reward:
            ratio = got.reward / opt.reward
            worst = ratio if worst is None else min(worst, ratio)
    return CriterionResult(
        True, (f"200 fixtures, worst reward/opt = {worst}", f"required = {bound}")
    )


def _crit_rounding_factor() -> CriterionResult:
    worst = None
    done = 0
    seed = 0
    while done < 100:
        if seed >= 300:
            return CriterionResult(False, (f"only {done} usable fixtures found",))
        inst = _knap_fixture(seed, max_n=8)
        seed += 1
        try:
            sol = solve_kolp(inst)
        except PathInfeasibleError:
            # No non-root vertex in reach: the relaxation is undefined and
            # the rounding factor is vacuous.
            continue
        done += 1
        opt = knap_orient_exact(inst)
        if sol.objective < float(opt.reward) - LP_SLACK:
            return CriterionResult(
                False,
                (f"seed {seed - 1}: relaxation {sol.objective} under optimum {opt.reward}",),
            )
        rounded = round_kolp(inst, sol)
        if float(rounded.reward) < sol.objective / 5 - LP_SLACK:
            return CriterionResult(
                False,
                (f"seed {seed - 1}: rounded {rounded.reward} under a fifth of {sol.objective}",),
            )
        if sol.objective > 1e-9:
            ratio = float(rounded.reward) / sol.objective
            worst = ratio if worst is None else min(worst, ratio)
    return CriterionResult(True, (f"100 fixtures, worst rounded/relaxation = {worst:.4f}",))


def _crit_scale_sweep() -> CriterionResult:
    worst = None
    for seed in range(50):
        n = 3 + seed % 4
        w = (2, 4, 8)[seed % 3]
        inst = gen_random(n, 6, w, 3, seed=1000 + seed)
        opt = opt_adaptive(inst)
        scales = log2_ceil(w)
        best_lp = 0.0
        for j in range(scales + 1):
            try:
                best_lp = max(best_lp, solve_kolp(window_instance(inst, j)).objective)
            except PathInfeasibleError:
                continue
        if best_lp < float(opt.value) / (scales + 1) - LP_SLACK:
            return CriterionResult(
                False,
                (f"seed {seed}: best window relaxation {best_lp} under opt/(L+1)",),
            )
        res = poly_logW(inst)
        if not res.exact_expectation:
            return CriterionResult(False, (f"seed {seed}: expectation not exact",))
        floor = opt.value / (40 * (scales + 1))
        if res.expected_value < floor:
            return CriterionResult(
                False,
                (f"seed {seed}: expected {res.expected_value} under floor {floor}",),
            )
        if opt.value:
            ratio = res.expected_value / opt.value
            worst = ratio if worst is None else min(worst, ratio)
    return CriterionResult(
        True, (f"50 fixtures, worst expected/opt = {worst} (~{float(worst):.4f})",)
    )


def _crit_structure_properties() -> CriterionResult:
    pool = _structure_pool(50)
    for seed, inst, _opt, st in pool:
        if not st.reward_checked:
            return CriterionResult(False, (f"seed {seed}: filter not satisfied",))
        problems = portal_violations(inst, st)
        if problems:
            return CriterionResult(False, (f"seed {seed}: {problems[0]}",))
    return CriterionResult(
        True,
        (
            f"50 fixtures, seeds {pool[0][0]}..{pool[-1][0]}",
            "all structure properties hold exactly",
        ),
    )


def _crit_config_relaxation() -> CriterionResult:
    pool = _structure_pool(50)[:20]
    rejections = 0
    worst = None
    for seed, inst, opt, st in pool:
        sol = solve_config_lp(inst, st)
        if sol.objective < float(opt.value) / 8 - LP_SLACK:
            return CriterionResult(
                False,
                (f"seed {seed}: objective {sol.objective} under an eighth of {opt.value}",),
            )
        ratio = sol.objective / float(opt.value)
        worst = ratio if worst is None else min(worst, ratio)
        for rseed in range(500):
            _policy, details = csko_round(inst, st, sol, seed=rseed, return_details=True)
            if not details.accepted:
                rejections += 1
    return CriterionResult(
        rejections == 0,
        (
            f"20 fixtures, worst objective/opt = {worst:.4f}",
            f"rejections over 10000 rounding seeds = {rejections}",
        ),
    )


def _feasible_sequences(inst: CorrKOInstance):
    others = [v for v in range(inst.n) if v != inst.root]
    for k in range(len(others) + 1):
        for perm in itertools.permutations(others, k):
            seq = (inst.root,) + perm
            walk = sum(inst.metric.distance(a, b) for a, b in zip(seq, seq[1:]))
            if walk <= inst.travel_budget:
                yield seq


def _crit_two_point() -> CriterionResult:
    for seed in range(50):
        inst = gen_2point(5, 6, 9, seed=seed)
        ada = opt_adaptive(inst).value
        non = opt_nonadaptive(inst).value
        if ada != non:
            return CriterionResult(False, (f"seed {seed}: gap {ada} vs {non}",))
        for seq in _feasible_sequences(inst):
            formula = two_point_path_value(inst, seq)
            exact = eval_nonadaptive_exact(inst, NonAdaptivePolicy(seq))
            if formula != exact:
                return CriterionResult(
                    False, (f"seed {seed}: formula {formula} vs evaluator {exact} on {seq}",)
                )
        okd = tcsko_to_okd(inst)
        back = okd_to_tcsko(okd, processing_budget=inst.processing_budget)
        if back != inst or tcsko_to_okd(back) != okd:
            return CriterionResult(False, (f"seed {seed}: round trip drifted",))
        sol = knap_okd_exact(okd)
        value = two_point_path_value(inst, sol.path)
        if value < sol.reward / 4:
            return CriterionResult(
                False, (f"seed {seed}: path value {value} under a quarter of {sol.reward}",)
            )
        if sol.reward < HALF_SURVIVAL_LOWER * ada:
            return CriterionResult(
                False,
                (f"seed {seed}: deadline optimum {sol.reward} under {HALF_SURVIVAL_LOWER} * {ada}",),
            )
    return CriterionResult(
        True,
        (
            "50 fixtures: no adaptivity gap, formula matches the evaluator on every",
            "feasible sequence, round trips are exact, reduction bounds hold",
        ),
    )


def _crit_cancellation() -> CriterionResult:
    done = 0
    seed = 0
    while done < 20:
        if seed >= 400:
            return CriterionResult(False, (f"only {done} rewarded fixtures found",))
        inst = split_rewards(gen_random(4, 6, 6, 3, seed=3000 + seed))[1]
        seed += 1
        if all(a.reward == 0 for d in inst.dists for a in d.atoms):
            continue
        done += 1
        relax = solve_ckoclp(inst)
        brute = opt_cancellation_bruteforce(inst)
        if relax.objective < float(brute.value) - LP_SLACK:
            return CriterionResult(
                False,
                (f"seed {seed - 1}: relaxation {relax.objective} under optimum {brute.value}",),
            )
        res = cancel_pipeline(inst, mode="best", seed=0)
        problems = ck_restricted_violations(inst, res.path, res.restricted_z, res.restricted_s)
        if problems:
            return CriterionResult(False, (f"seed {seed - 1}: {problems[0]}",))
        if res.search_value < res.path_reward / 8:
            return CriterionResult(
                False,
                (f"seed {seed - 1}: search {res.search_value} under an eighth of {res.path_reward}",),
            )
    return CriterionResult(
        True,
        (
            "20 fixtures: relaxation dominates the brute-force optimum, restricted",
            "chains are feasible, threshold search clears an eighth of the path reward",
        ),
    )


def _okd_bruteforce(inst: OrientKDInstance) -> Fraction:
    best = inst.rewards[inst.root]
    others = [v for v in range(inst.metric.n) if v != inst.root]
    for k in range(1, len(others) + 1):
        for perm in itertools.permutations(others, k):
            path = (inst.root,) + perm
            if orientkd_violations(inst, path):
                continue
            best = max(best, sum(inst.rewards[v] for v in path))
    return best


def _crit_deadline_solvers() -> CriterionResult:
    for seed in range(40):
        inst = _orientkd_fixture(seed)
        opt = orientkd_exact(inst)
        brute = _okd_bruteforce(inst)
        if opt.reward != brute:
            return CriterionResult(
                False, (f"seed {seed}: solver {opt.reward} vs permutations {brute}",)
            )
        buckets = deadline_buckets(inst)
        scale_count = sum(1 for j in buckets if j >= 0)
        divisor = 3 * (max(scale_count - 1, 0) + 2)
        bucketed = orientkd_bucketing(inst)
        if bucketed.reward * divisor < opt.reward:
            return CriterionResult(
                False,
                (f"seed {seed}: bucketing {bucketed.reward} under opt/{divisor}",),
            )
        if len(opt.path) >= 2:
            st = extract_okd_portals(opt.path, inst)
            res = orientkd_portal_alg(inst, st)
            if orientkd_violations(inst, res.path):
                return CriterionResult(False, (f"seed {seed}: portal output infeasible",))
            if res.reward * 8 < opt.reward:
                return CriterionResult(
                    False,
                    (f"seed {seed}: portal reward {res.reward} under an eighth of {opt.reward}",),
                )
    return CriterionResult(
        True,
        (
            "40 fixtures: exact solver matches permutation search, bucketing and",
            "portal candidates clear their factors with feasible outputs",
        ),
    )


def _crit_determinism() -> CriterionResult:
    specs = [
        {
            "id": "det-gap",
            "experiment": "adaptivity-gap",
            "instance": {"generator": "adaptgap", "params": {"height": 4}},
        },
        {
            "id": "det-sweep",
            "experiment": "scale-sweep",
            "instance": {
                "generator": "random",
                "params": {"n": 5, "travel": 6, "processing": 8, "atoms": 3, "seed": 17},
            },
            "trials": 400,
            "seed": 11,
        },
        {
            "id": "det-appendix",
            "experiment": "appendix-order",
            "instance": {"generator": "appendix", "params": {"items": 2, "processing": 9}},
        },
    ]
    caps = OracleBudgetCaps()
    for spec in specs:
        first = run_experiment(spec, caps).render("text")
        second = run_experiment(spec, caps).render("text")
        if first != second:
            return CriterionResult(False, (f"report {spec['id']} differed between runs",))
    inst = gen_random(5, 6, 8, 3, seed=17)
    res = poly_logW(inst, mode="randomized", seed=23)
    if res != poly_logW(inst, mode="randomized", seed=23):
        return CriterionResult(False, ("randomized scale sweep differed",))
    sim = simulate(inst, res.policy, 500, seed=9)
    if sim != simulate(inst, res.policy, 500, seed=9):
        return CriterionResult(False, ("simulation differed",))
    seed0, fixture, _opt, st = _structure_pool(1)[0]
    sol = solve_config_lp(fixture, st)
    one = csko_round(fixture, st, sol, seed=31, return_details=True)
    two = csko_round(fixture, st, sol, seed=31, return_details=True)
    if one != two:
        return CriterionResult(False, (f"rounding on balanced seed {seed0} differed",))
    bern = gen_bernoulli(5, 6, 8, seed=3)
    if bernoulli_csko(bern, mode="sampled", seed=7) != bernoulli_csko(
        bern, mode="sampled", seed=7
    ):
        return CriterionResult(False, ("bernoulli branch sampling differed",))
    small = split_rewards(gen_random(4, 6, 6, 3, seed=3002))[1]
    if cancel_pipeline(small, mode="sampled", seed=13) != cancel_pipeline(
        small, mode="sampled", seed=13
    ):
        return CriterionResult(False, ("cancellation branch sampling differed",))
    return CriterionResult(
        True,
        (
            "three experiment reports, randomized sweep, simulation, configuration",
            "rounding, and both samplers are byte-identical under fixed seeds",
        ),
    )


class Criterion(NamedTuple):
    number: int
    name: str
    run: Callable[[], CriterionResult]


CRITERIA: tuple[Criterion, ...] = (
    Criterion(1, "adaptive walker floor", _crit_adaptive_floor),
    Criterion(2, "nonadaptive ceiling and gap growth", _crit_nonadaptive_ceiling),
    Criterion(3, "order sensitivity", _crit_order_sensitivity),
    Criterion(4, "lagrangian knapsack factor", _crit_lagrangian_factor),
    Criterion(5, "relaxation rounding factor", _crit_rounding_factor),
    Criterion(6, "scale sweep chain", _crit_scale_sweep),
    Criterion(7, "structure extraction properties", _crit_structure_properties),
    Criterion(8, "configuration relaxation and rounding", _crit_config_relaxation),
    Criterion(9, "two-point reductions", _crit_two_point),
    Criterion(10, "cancellation relaxation and search", _crit_cancellation),
    Criterion(11, "deadline solvers", _crit_deadline_solvers),
    Criterion(12, "seeded determinism", _crit_determinism),
)


def cmd_acceptance(args) -> int:
    if args.list:
        rb = ReportBuilder()
        rb.section("acceptance criteria")
        for crit in CRITERIA:
            rb.put(f"criterion {crit.number:02d}", crit.name)
        _write_output(rb.render(args.format), args.out)
        return 0
    selected = CRITERIA
    if args.criterion is not None:
        selected = tuple(c for c in CRITERIA if c.number == args.criterion)
        if not selected:
            raise UsageError(
                f"no criterion {args.criterion}; valid numbers are 1..{len(CRITERIA)}"
            )
    rb = ReportBuilder()
    rb.section("acceptance")
    failures = 0
    for crit in selected:
        started = time.monotonic()
        result = crit.run()
        elapsed = time.monotonic() - started
        print(f"criterion {crit.number:02d} took {elapsed:.1f}s", file=sys.stderr)
        rb.check(f"criterion {crit.number:02d} {crit.name}", result.passed)
        for note in result.notes:
            rb.note(f"  {note}")
        if not result.passed:
            failures += 1
    rb.put("summary", f"{len(selected) - failures}/{len(selected)} passed")
    _write_output(rb.render(args.format), args.out)
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Argument parsing.


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stochorient",
        description="exact toolkit for correlated stochastic orienteering",
    )
    parser.add_argument("--seed", type=int, default=None, help="seed for randomized steps")
    parser.add_argument(
        "--caps", default=None, help="oracle caps, e.g. vertices=8,processing=64,states=2000000"
    )
    parser.add_argument(
        "--format", choices=("text", "rows"), default="text",
        help="report rendering: structured text or tab-separated rows",
    )
    # The same flags are accepted after the subcommand; SUPPRESS keeps an
    # absent sub-level flag from clobbering a value parsed at the top level.
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--caps", default=argparse.SUPPRESS)
    common.add_argument("--format", choices=("text", "rows"), default=argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a generated instance", parents=[common])
    p.add_argument("family", choices=sorted(GENERATOR_PARAMS))
    p.add_argument("--n", type=int, default=5, help="vertex count including the root")
    p.add_argument("--travel", type=int, default=6, help="travel budget")
    p.add_argument("--processing", type=int, default=None, help="processing budget")
    p.add_argument("--atoms", type=int, default=3, help="max atoms per distribution (random)")
    p.add_argument("--height", type=int, default=4, help="tree height (adaptgap)")
    p.add_argument("--items", type=int, default=2, help="item count (appendix)")
    p.add_argument("--out", default=None, help="output file, stdout when omitted")
    p.set_defaults(handler=cmd_gen)

    p = sub.add_parser("solve", help="run the scale sweep on an instance", parents=[common])
    p.add_argument("--instance", required=True)
    p.add_argument("--mode", choices=("derandomize", "randomized"), default="derandomize")
    p.add_argument("--solver", choices=("lp", "exact"), default="lp")
    p.add_argument("--samples", type=int, default=512,
                   help="sample count past the exact-expectation cap")
    p.add_argument("--policy-out", default=None, help="also store the policy here")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo a stored policy", parents=[common])
    p.add_argument("--instance", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("oracle", help="exact optima at desk scale", parents=[common])
    p.add_argument("--instance", required=True)
    p.add_argument(
        "--what",
        choices=("adaptive", "nonadaptive", "gap", "cancellation", "fixed-order"),
        default="adaptive",
    )
    p.add_argument("--order", default=None, help="comma-separated order for fixed-order")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_oracle)

    p = sub.add_parser("csko", help="specialized reduction pipelines", parents=[common])
    p.add_argument("--instance", required=True)
    p.add_argument(
        "--algorithm", choices=("bernoulli", "cancel", "twopoint", "split"), required=True
    )
    p.add_argument("--mode", choices=("best", "sampled"), default="best")
    p.add_argument("--solver", choices=("exact", "lagrangian"), default="exact")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_csko)

    p = sub.add_parser("report", help="run an experiment spec file", parents=[common])
    p.add_argument("--spec", required=True, help="JSON experiment spec")
    p.add_argument("--out", default=None, help="overrides the spec's out field")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("acceptance", help="run the built-in verification suite", parents=[common])
    p.add_argument("--criterion", type=int, default=None, help="run a single criterion")
    p.add_argument("--list", action="store_true", help="list criteria and exit")
    p.add_argument("--out", default=None)
    p.set_defaults(handler=cmd_acceptance)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
