"""Synthesis orchestration: the candidate/counterexample loop, an exhaustive
brute-force reference synthesizer, and report emission.

The loop alternates two solver sessions.  The synthesis session holds the
template-correctness constraints, the produce-encodings of every observed
molecule, and the accumulated rejections; the counterexample session holds the
molecule-template constraints and is re-targeted at each candidate rule set
under push/pop.  A returned rule set is accepted only after the concrete
forward oracle re-verifies it, independently of the encoder.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from typing import Optional

from .backend import Session, SolverConfig, default_solver_config
from .core import Dataset, Molecule, Rule, RuleSet, TreeNode
from .encoder import (
    ConcreteMoleculeSide,
    ConcreteRuleSide,
    EncodingContext,
    ProductionVars,
    Variants,
    decode_molecule,
    decode_rules,
    encode_produce,
    make_molecule_template,
    make_rule_templates,
    mol_template_correctness,
    negative_constraint,
    rule_template_correctness,
    symmetry_break,
)
from .formula import conj
from .grammar import serialize_molecule, serialize_rule
from .producer import (
    ClosureBudgetExceeded,
    ClosureConfig,
    RepeatConfig,
    VerificationReport,
    closure,
    is_rooted_prefix,
    verify,
)

SYNTHESIZED = "Synthesized"
NO_RULES = "NoRulesInBudget"
INCONCLUSIVE = "Inconclusive"

MODE_QUANTIFIED = "quantified"
MODE_INSTANTIATE = "instantiate-only"


@dataclass
class Budgets:
    rules: int
    depth: int
    width: Optional[int] = None  # defaults to the alphabet's maximum arity
    height: Optional[int] = None  # defaults to the tallest observed molecule
    compartments: int = 1


@dataclass
class Limits:
    max_iterations: int = 1000
    wall_clock_s: float = 600.0


@dataclass
class SynthesisJob:
    dataset: Dataset
    budgets: Budgets
    variants: Variants = field(default_factory=Variants)
    solver: Optional[SolverConfig] = None
    limits: Limits = field(default_factory=Limits)
    mode: str = MODE_QUANTIFIED
    symmetry: bool = True
    ce_strategy: str = "rebuild"  # or "reuse": specialize one template encoding
    minimize: bool = False

    def resolved_width(self) -> int:
        w = self.budgets.width
        max_arity = self.dataset.alphabet.max_arity
        if w is None:
            return max_arity
        if w < max_arity:
            raise ValueError(f"width {w} below the maximum arity {max_arity}")
        return w

    def resolved_height(self) -> int:
        h = self.budgets.height
        tallest = self.dataset.max_height
        if h is None:
            return tallest
        if h < tallest:
            raise ValueError(f"height {h} below the tallest observed molecule")
        return h

    def closure_config(self) -> ClosureConfig:
        repeat = None
        if self.variants.repeat is not None:
            repeat = RepeatConfig(*self.variants.repeat)
        return ClosureConfig(
            height_bound=self.resolved_height(),
            repeat=repeat,
            fast_slow=self.variants.fast_slow,
        )


@dataclass
class IterationRecord:
    index: int
    rules: RuleSet
    counterexample: Optional[Molecule]
    synth_seconds: float
    cex_seconds: float


@dataclass
class SynthesisOutcome:
    status: str
    rules: Optional[RuleSet] = None
    iterations: int = 0
    counterexamples: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    verification: Optional[VerificationReport] = None
    warnings: list = field(default_factory=list)
    duplicate_counterexamples: int = 0
    last_candidate: Optional[RuleSet] = None  # set on Inconclusive outcomes


def synthesize(job: SynthesisJob) -> SynthesisOutcome:
    data = job.dataset
    n = job.budgets.rules
    d = job.budgets.depth
    k = job.budgets.compartments
    if k < 1:
        raise ValueError("need at least one compartment")
    w = job.resolved_width()
    h = job.resolved_height()
    variants = Variants(
        compartments=k,
        fast_slow=job.variants.fast_slow,
        hard_ends=job.variants.hard_ends,
        repeat=job.variants.repeat,
    )
    started = time.monotonic()
    deadline = started + job.limits.wall_clock_s
    cfg = job.solver or default_solver_config()
    outcome = SynthesisOutcome(status=INCONCLUSIVE)

    ctx = EncodingContext(data.alphabet, n, variants)
    templates = make_rule_templates(ctx, d, w, n) if n > 0 else []
    mtemplate = make_molecule_template(ctx, h, w)
    tcons = rule_template_correctness(ctx, templates)
    if job.symmetry and n > 1:
        tcons = conj([tcons, symmetry_break(templates)])
    mcons = mol_template_correctness(ctx, mtemplate, list(data.molecules))

    template_vars = [v for t in templates for v in t.all_vars()]
    observed_keys = {serialize_molecule(m) for m in data.molecules}
    seen_counterexamples: set[str] = set()

    with Session(cfg) as synth, Session(cfg) as cex:
        synth.assert_formula(tcons)
        for mol in data.molecules:
            side = ConcreteMoleculeSide(ctx, mol)
            pf, prod = encode_produce(ctx, side, templates)
            synth.declare_order_cluster([prod.tau[p] for p in prod.paths])
            synth.assert_formula(pf)

        cex.assert_formula(mcons)
        ce_prod = ProductionVars(ctx, mtemplate)
        cex.declare_order_cluster([ce_prod.tau[p] for p in ce_prod.paths])
        reuse = job.ce_strategy == "reuse"
        if reuse:
            rce, _ = encode_produce(ctx, mtemplate, templates, prod=ce_prod)
            cex.assert_formula(rce)

        iteration = 0
        while True:
            iteration += 1
            if iteration > job.limits.max_iterations:
                outcome.status = INCONCLUSIVE
                outcome.iterations = iteration - 1
                outcome.warnings.append("iteration limit reached")
                break
            if time.monotonic() > deadline:
                outcome.status = INCONCLUSIVE
                outcome.iterations = iteration - 1
                outcome.warnings.append("wall clock limit reached")
                break

            t0 = time.monotonic()
            label = f"query_{iteration}_synth" if cfg.dump_dir else None
            res = synth.check_sat(label)
            synth_secs = time.monotonic() - t0
            if res == "unsat":
                outcome.status = NO_RULES
                outcome.iterations = iteration
                break
            if res == "unknown":
                outcome.status = INCONCLUSIVE
                outcome.warnings.append("synthesis query returned unknown")
                outcome.iterations = iteration
                break
            model = synth.get_model(template_vars)
            rules = decode_rules(ctx, model, templates) if n > 0 else RuleSet((), k)
            if job.minimize and n > 0:
                rules, model = _minimize(job, ctx, synth, templates, model)

            t1 = time.monotonic()
            cex.push()
            if reuse:
                _assert_model_equalities(cex, ctx, model, templates)
            else:
                sides = [ConcreteRuleSide(ctx, r) for r in rules]
                rce, _ = encode_produce(ctx, mtemplate, sides, prod=ce_prod)
                cex.assert_formula(rce)
            label = f"query_{iteration}_cex" if cfg.dump_dir else None
            res2 = cex.check_sat(label)
            if res2 == "sat":
                ce_model = cex.get_model(
                    [mtemplate.sugar[p] for p in mtemplate.paths]
                    + ce_prod.all_vars()
                )
            cex.pop()
            cex_secs = time.monotonic() - t1

            if res2 != "sat":
                outcome.iterations = iteration
                outcome.trace.append(
                    IterationRecord(iteration, rules, None, synth_secs, cex_secs)
                )
                if res2 == "unknown":
                    outcome.warnings.append(
                        "counterexample query returned unknown; "
                        "accepting only if the oracle verifies"
                    )
                report = _gated_verify(job, rules, outcome)
                if report is not None and report.passed:
                    outcome.status = SYNTHESIZED
                    outcome.rules = rules
                    outcome.verification = report
                else:
                    outcome.status = INCONCLUSIVE
                break

            counterexample = decode_molecule(ctx, ce_model, mtemplate)
            outcome.trace.append(
                IterationRecord(iteration, rules, counterexample, synth_secs, cex_secs)
            )
            outcome.counterexamples.append(counterexample)
            key = serialize_molecule(counterexample)
            if key in seen_counterexamples:
                outcome.duplicate_counterexamples += 1
            seen_counterexamples.add(key)

            witness = _extract_witness(ce_model, ce_prod, counterexample)
            fast_escape = variants.fast_slow and key not in observed_keys and any(
                is_rooted_prefix(counterexample, obs) for obs in data.molecules
            )
            nc = negative_constraint(
                ctx, templates, counterexample, witness, fast_escape
            )
            if nc.helper is not None:
                synth.assert_formula(nc.helper)
            if job.mode == MODE_QUANTIFIED:
                synth.assert_formula(nc.universal)
            synth.assert_formula(nc.instance)

    if outcome.status == INCONCLUSIVE and outcome.trace:
        # hand back the last candidate and how it fares, so the user can
        # decide whether to relax the budgets
        outcome.last_candidate = outcome.trace[-1].rules
        if outcome.verification is None:
            try:
                outcome.verification = verify(
                    outcome.last_candidate, data, job.closure_config()
                )
            except ClosureBudgetExceeded as exc:
                outcome.warnings.append(f"last-candidate verification aborted: {exc}")
    outcome.timings["total_s"] = time.monotonic() - started
    outcome.timings["per_iteration"] = [
        (r.synth_seconds, r.cex_seconds) for r in outcome.trace
    ]
    return outcome


def _gated_verify(job, rules: RuleSet, outcome) -> Optional[VerificationReport]:
    try:
        report = verify(rules, job.dataset, job.closure_config())
    except ClosureBudgetExceeded as exc:
        outcome.warnings.append(f"oracle verification aborted: {exc}")
        return None
    if not report.passed:
        outcome.warnings.append(
            "encoder accepted a rule set the oracle rejects; "
            "returning Inconclusive"
        )
    return report


def _assert_model_equalities(session, ctx, model, templates):
    from .formula import BOOL, IntSort, bool_ref, enum_is, int_eq, not_

    parts = []
    for t in templates:
        for var in t.all_vars():
            val = model.value(var)
            if var.sort == BOOL:
                parts.append(bool_ref(var) if val else not_(bool_ref(var)))
            elif isinstance(var.sort, IntSort):
                parts.append(int_eq(var, val))
            else:
                parts.append(enum_is(var, val))
    session.assert_formula(conj(parts))


def _extract_witness(ce_model, ce_prod: ProductionVars, counterexample: Molecule):
    witness = {}
    for path, _ in counterexample.positions():
        cuts_v = ce_model.value(ce_prod.cuts[path])
        rmatch_v = ce_model.value(ce_prod.rmatch[path]) if ce_prod.rmatch else None
        tau_v = ce_model.value(ce_prod.tau[path])
        comp_v = ce_model.value(ce_prod.comp[path]) if ce_prod.comp else None
        witness[path] = (cuts_v, rmatch_v, tau_v, comp_v)
    return witness


def _minimize(job, ctx, session, templates, model):
    """Iterative cardinality tightening on the count of present rule nodes."""
    from .encoder import K_ABSENT
    from .formula import enum_is, not_

    bits = [
        not_(enum_is(t.situation[p], K_ABSENT)) for t in templates for p in t.paths
    ]
    best_model = model
    best = _present_count(ctx, model, templates)
    while best > 0:
        session.push()
        session.assert_formula(_at_most(ctx, bits, best - 1))
        if session.check_sat() == "sat":
            model = session.get_model(
                [v for t in templates for v in t.all_vars()]
            )
            count = _present_count(ctx, model, templates)
            session.pop()
            if count >= best:
                break  # no strict progress: stop rather than loop
            best_model = model
            best = count
        else:
            session.pop()
            break
    rules = decode_rules(ctx, best_model, templates)
    return rules, best_model


def _present_count(ctx, model, templates) -> int:
    from .encoder import K_ABSENT

    return sum(
        1
        for t in templates
        for p in t.paths
        if model.value(t.situation[p]) != K_ABSENT
    )


def _at_most(ctx, bits, bound: int):
    """Sequential-counter cardinality constraint as a plain formula."""
    from .formula import BOOL, bool_ref, conj as fconj, implies, not_

    if bound < 0:
        return conj([not_(b) for b in bits]) if bits else conj([])
    if bound >= len(bits):
        return conj([])
    reg = ctx.registry
    prev = None
    parts = []
    for i, bit in enumerate(bits):
        row = [reg.make(f"card_{i}_{j}", BOOL) for j in range(bound + 1)]
        parts.append(implies(bit, bool_ref(row[0])))
        if prev is not None:
            for j in range(bound + 1):
                parts.append(implies(bool_ref(prev[j]), bool_ref(row[j])))
                if j + 1 <= bound:
                    parts.append(
                        implies(
                            fconj([bool_ref(prev[j]), bit]), bool_ref(row[j + 1])
                        )
                    )
            parts.append(not_(fconj([bool_ref(prev[bound]), bit])))
        prev = row
    if prev is not None:
        # row[bound] states "count >= bound+1": forbid it outright
        parts.append(not_(bool_ref(prev[bound])))
    return fconj(parts)


# --------------------------------------------------------------------------
# brute-force reference synthesizer
# --------------------------------------------------------------------------


class BudgetTooLarge(RuntimeError):
    pass


def enumerate_trees(alphabet, height: int, width: int):
    """Every arity-respecting tree of height <= `height` (width is implicit
    in the arities)."""
    memo: dict[int, list] = {}

    def rec(limit: int):
        if limit in memo:
            return memo[limit]
        out = []
        for m in alphabet:
            if limit == 0:
                out.append(TreeNode(m.name, (None,) * m.arity))
                continue
            child_options = [rec(limit - 1) + [None] for _ in range(m.arity)]
            for combo in itertools.product(*child_options):
                out.append(TreeNode(m.name, tuple(combo)))
        memo[limit] = out
        return out

    return rec(height)


def enumerate_rules(alphabet, depth: int, width: int, compartments: int,
                    variants: Variants, cap: int = 1_000_000) -> list[Rule]:
    """Every concrete rule expressible within the template budget."""
    rules = []
    for tree in enumerate_trees(alphabet, depth, width):
        positions = [
            p for p, _ in sorted(_positions(tree)) if 0 < len(p) < depth
        ]
        for expand in positions:
            hard_options = [frozenset()]
            if variants.hard_ends:
                empty_slots = _empty_slots(tree, alphabet)
                hard_options = [
                    frozenset(combo)
                    for r in range(len(empty_slots) + 1)
                    for combo in itertools.combinations(empty_slots, r)
                ]
            for hard in hard_options:
                for comp in range(1, compartments + 1):
                    speeds = (False, True) if variants.fast_slow else (False,)
                    for fast in speeds:
                        rules.append(Rule(tree, expand, hard, comp, fast))
                        if len(rules) > cap:
                            raise BudgetTooLarge(
                                f"more than {cap} candidate rules"
                            )
    return rules


def _positions(tree: TreeNode, path=()):
    yield path, tree
    for slot in range(1, len(tree.children) + 1):
        kid = tree.children[slot - 1]
        if kid is not None:
            yield from _positions(kid, path + (slot,))


def _empty_slots(tree: TreeNode, alphabet):
    out = []
    for path, node in sorted(_positions(tree)):
        for slot in range(1, alphabet.arity(node.label) + 1):
            if node.child(slot) is None:
                out.append((path, slot))
    return out


def brute_force_synth(job: SynthesisJob, max_sets: int = 2_000_000
                      ) -> SynthesisOutcome:
    """Ground truth at tiny scale: enumerate every rule set within the budget
    and oracle-verify each until one passes."""
    data = job.dataset
    n = job.budgets.rules
    k = job.budgets.compartments
    w = job.resolved_width()
    cfg = job.closure_config()
    outcome = SynthesisOutcome(status=NO_RULES)
    if n == 0:
        report = verify(RuleSet((), k), data, cfg)
        if report.passed:
            return SynthesisOutcome(
                status=SYNTHESIZED, rules=RuleSet((), k), verification=report
            )
        return outcome
    candidates = enumerate_rules(
        data.alphabet, job.budgets.depth, w, k, job.variants
    )
    checked = 0
    for size in range(1, n + 1):
        for combo in itertools.combinations(candidates, size):
            checked += 1
            if checked > max_sets:
                raise BudgetTooLarge(f"more than {max_sets} rule sets")
            rs = RuleSet(tuple(combo), k)
            try:
                report = verify(rs, data, cfg)
            except ClosureBudgetExceeded:
                continue
            if report.passed:
                return SynthesisOutcome(
                    status=SYNTHESIZED, rules=rs, verification=report,
                    iterations=checked,
                )
    outcome.iterations = checked
    return outcome


# --------------------------------------------------------------------------
# report emission
# --------------------------------------------------------------------------


def outcome_report(outcome: SynthesisOutcome, job: SynthesisJob) -> str:
    lines = [f"status: {outcome.status}"]
    lines.append(f"iterations: {outcome.iterations}")
    lines.append(f"wall_seconds: {outcome.timings.get('total_s', 0.0):.3f}")
    b = job.budgets
    lines.append(
        f"budgets: rules={b.rules} depth={b.depth} width={job.resolved_width()}"
        f" height={job.resolved_height()} compartments={b.compartments}"
    )
    if outcome.rules is not None:
        lines.append(f"compartments: {outcome.rules.compartment_count}")
        lines.append("rules:")
        for r in outcome.rules:
            lines.append(f"  {serialize_rule(r)}")
    elif outcome.last_candidate is not None:
        lines.append("last candidate (not accepted):")
        for r in outcome.last_candidate:
            lines.append(f"  {serialize_rule(r)}")
    if outcome.verification is not None:
        lines.append("verification:")
        for ln in outcome.verification.to_text().strip().splitlines():
            lines.append(f"  {ln}")
    if outcome.counterexamples:
        lines.append("counterexamples:")
        for m in outcome.counterexamples:
            lines.append(f"  {serialize_molecule(m)}")
    if outcome.duplicate_counterexamples:
        lines.append(f"duplicate_counterexamples: {outcome.duplicate_counterexamples}")
    for w in outcome.warnings:
        lines.append(f"warning: {w}")
    return "\n".join(lines) + "\n"
