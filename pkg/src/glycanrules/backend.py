"""SMT-LIB2 session layer: lowering, solver subprocess management, models.

The session speaks SMT-LIB2 v2.6 text over the child process's standard
streams: one `(check-sat)` per query, models fetched with `(get-value ...)`
over explicit variable lists, scoped retraction via `(push 1)`/`(pop 1)`.
Identical formulas produce byte-identical text (deterministic name allocation
and let-naming), which makes query transcripts replayable.

The default executable is the bundled solver (`python -m glycanrules.minismt`);
set GLYCANRULES_SOLVER to substitute any SMT-LIB2 solver binary such as z3.
"""

from __future__ import annotations

import os
import pathlib
import subprocess
import sys
from dataclasses import dataclass
from typing import Optional

from .formula import (
    BOOL,
    And,
    BoolRef,
    EnumEq,
    EnumSort,
    FALSE,
    Forall,
    Formula,
    Iff,
    Implies,
    IntCmp,
    IntSort,
    Not,
    Or,
    TRUE,
    Var,
    conj,
    domain_product,
    domain_size,
    free_vars,
    substitute,
)
from .minismt.sexpr import Reader, SexprError


class BackendError(RuntimeError):
    pass


class SolverLaunchError(BackendError):
    pass


class ProtocolError(BackendError):
    def __init__(self, message, transcript_tail=""):
        super().__init__(message + ("\n--- transcript tail ---\n" + transcript_tail
                                    if transcript_tail else ""))


@dataclass
class SolverConfig:
    executable: str = ""
    extra_args: tuple = ()
    timeout_ms: int = 600_000
    logic: str = "UFDTLIA"
    dump_dir: Optional[str] = None
    expand_quantifier_threshold: int = 4096

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")

    def command(self) -> list[str]:
        if self.executable:
            return [self.executable, *self.extra_args]
        return [sys.executable, "-m", "glycanrules.minismt"]


def default_solver_config(**overrides) -> SolverConfig:
    cfg = SolverConfig(**overrides)
    if not cfg.executable:
        env = os.environ.get("GLYCANRULES_SOLVER", "")
        if env:
            cfg.executable = env
            args = os.environ.get("GLYCANRULES_SOLVER_ARGS")
            if args is not None:
                cfg.extra_args = tuple(args.split())
            elif "z3" in pathlib.Path(env).name:
                cfg.extra_args = ("-in", "-smt2")
    return cfg


def _sort_text(sort) -> str:
    if sort == BOOL:
        return "Bool"
    if isinstance(sort, IntSort):
        return "Int"
    if isinstance(sort, EnumSort):
        return sort.name
    raise BackendError(f"unknown sort {sort!r}")


class _Emitter:
    """Deterministic text for one formula; reused subterms become lets."""

    def __init__(self):
        self.let_counter = 0

    def emit(self, f: Formula) -> str:
        refs: dict[int, int] = {}
        inside: set[int] = set()
        self._count(f, refs, set(), False, inside)
        names: dict[int, str] = {}
        bindings: list[tuple[str, str]] = []
        body = self._text(f, refs, names, bindings, inside)
        for name, value in reversed(bindings):
            body = f"(let (({name} {value})) {body})"
        return body

    def _count(self, f: Formula, refs: dict, seen: set, under: bool, inside: set):
        if isinstance(f, (And, Or, Not, Implies, Iff, Forall)):
            key = id(f)
            refs[key] = refs.get(key, 0) + 1
            if under:
                inside.add(key)
            if key in seen:
                return
            seen.add(key)
            if isinstance(f, Not):
                self._count(f.arg, refs, seen, under, inside)
            elif isinstance(f, (And, Or)):
                for a in f.args:
                    self._count(a, refs, seen, under, inside)
            elif isinstance(f, (Implies, Iff)):
                self._count(f.left, refs, seen, under, inside)
                self._count(f.right, refs, seen, under, inside)
            else:
                self._count(f.body, refs, seen, True, inside)

    def _text(self, f: Formula, refs, names, bindings, inside) -> str:
        if f is TRUE:
            return "true"
        if f is FALSE:
            return "false"
        if isinstance(f, BoolRef):
            return f.var.name
        if isinstance(f, EnumEq):
            rhs = f.right.name if isinstance(f.right, Var) else f.right
            return f"(= {f.left.name} {rhs})"
        if isinstance(f, IntCmp):
            lhs = f.lhs.name if isinstance(f.lhs, Var) else str(f.lhs)
            rhs = f.rhs.name if isinstance(f.rhs, Var) else str(f.rhs)
            return f"({f.op} {lhs} {rhs})"
        key = id(f)
        if key in names:
            return names[key]
        if isinstance(f, Not):
            text = f"(not {self._text(f.arg, refs, names, bindings, inside)})"
        elif isinstance(f, And):
            inner = " ".join(
                self._text(a, refs, names, bindings, inside) for a in f.args
            )
            text = f"(and {inner})"
        elif isinstance(f, Or):
            inner = " ".join(
                self._text(a, refs, names, bindings, inside) for a in f.args
            )
            text = f"(or {inner})"
        elif isinstance(f, Implies):
            text = (
                f"(=> {self._text(f.left, refs, names, bindings, inside)}"
                f" {self._text(f.right, refs, names, bindings, inside)})"
            )
        elif isinstance(f, Iff):
            text = (
                f"(= {self._text(f.left, refs, names, bindings, inside)}"
                f" {self._text(f.right, refs, names, bindings, inside)})"
            )
        elif isinstance(f, Forall):
            binders = " ".join(f"({v.name} {_sort_text(v.sort)})" for v in f.vars)
            guard_parts = []
            for v in f.vars:
                if isinstance(v.sort, IntSort):
                    guard_parts.append(f"(<= {v.sort.lo} {v.name})")
                    guard_parts.append(f"(<= {v.name} {v.sort.hi})")
            if not guard_parts:
                guard = "true"
            elif len(guard_parts) == 1:
                guard = guard_parts[0]
            else:
                guard = "(and " + " ".join(guard_parts) + ")"
            body = self._text(f.body, refs, names, bindings, inside)
            text = f"(forall ({binders}) (=> {guard} {body}))"
        else:
            raise BackendError(f"cannot emit node {f!r}")
        # nodes under a binder cannot be lifted into outer lets
        if refs.get(key, 0) > 1 and key not in inside and not isinstance(f, Forall):
            name = f"l{self.let_counter}"
            self.let_counter += 1
            bindings.append((name, text))
            names[key] = name
            return name
        return text


class Model:
    def __init__(self, assignment: dict):
        self.assignment = assignment

    def __getitem__(self, var: Var):
        return self.assignment[var.name]

    def value(self, var: Var):
        return self.assignment[var.name]

    def get(self, var: Var, default=None):
        return self.assignment.get(var.name, default)


class Session:
    """One live solver subprocess. Callers serialize; not thread-safe."""

    def __init__(self, config: SolverConfig):
        self.config = config
        self.declared: set[str] = set()
        self.declared_sorts: dict[str, tuple] = {}
        self.commands: list[str] = []
        self.depth = 0
        self.check_count = 0
        self._emitter = _Emitter()
        try:
            self.proc = subprocess.Popen(
                config.command(),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
            )
        except OSError as exc:
            raise SolverLaunchError(
                f"cannot launch solver {config.command()!r}: {exc}"
            ) from exc
        self._send("(set-option :print-success true)", expect="success")
        self._send("(set-option :produce-models true)", expect="success")
        self._send("(set-option :global-declarations true)", expect="success")
        self._send(f"(set-option :timeout {config.timeout_ms})", expect="success")
        self._send(f"(set-logic {config.logic})", expect="success")

    # ----- plumbing -----

    def _send(self, line: str, expect: Optional[str] = None):
        self.commands.append(line)
        if self.proc.stdin is None:
            raise ProtocolError("solver stdin closed")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except BrokenPipeError as exc:
            raise ProtocolError(
                "solver exited unexpectedly", "\n".join(self.commands[-5:])
            ) from exc
        if expect is not None:
            reply = self._read_line()
            if reply != expect:
                if reply.startswith("(error"):
                    raise ProtocolError(reply, "\n".join(self.commands[-8:]))
                raise ProtocolError(
                    f"expected {expect!r}, solver said {reply!r}",
                    "\n".join(self.commands[-8:]),
                )

    def _read_line(self) -> str:
        if self.proc.stdout is None:
            raise ProtocolError("solver stdout closed")
        line = self.proc.stdout.readline()
        if line == "":
            raise ProtocolError(
                "solver closed its output", "\n".join(self.commands[-8:])
            )
        return line.strip()

    def _read_form(self):
        reader = Reader()
        while True:
            line = self.proc.stdout.readline()
            if line == "":
                raise ProtocolError(
                    "solver closed its output mid-form", "\n".join(self.commands[-8:])
                )
            try:
                forms = reader.feed(line)
            except SexprError as exc:
                raise ProtocolError(f"bad solver output: {exc}", line) from exc
            if forms:
                return forms[0]

    # ----- declarations -----

    def _ensure_declared(self, f: Formula):
        for var in free_vars(f):
            self.declare_var(var)

    def declare_var(self, var: Var):
        if var.name in self.declared:
            return
        if isinstance(var.sort, EnumSort):
            self._ensure_sort(var.sort)
        self.declared.add(var.name)
        self._send(
            f"(declare-fun {var.name} () {_sort_text(var.sort)})", expect="success"
        )
        if isinstance(var.sort, IntSort):
            self._send(
                f"(assert (and (<= {var.sort.lo} {var.name})"
                f" (<= {var.name} {var.sort.hi})))",
                expect="success",
            )

    def _ensure_sort(self, sort: EnumSort):
        known = self.declared_sorts.get(sort.name)
        if known is not None:
            if known != sort.members:
                raise BackendError(
                    f"sort {sort.name} redeclared with different members"
                )
            return
        self.declared_sorts[sort.name] = sort.members
        ctors = " ".join(f"({m})" for m in sort.members)
        self._send(
            f"(declare-datatypes (({sort.name} 0)) (({ctors})))", expect="success"
        )

    def declare_order_cluster(self, vars: list[Var]):
        """Hint: these Int variables only face each other in comparisons."""
        for v in vars:
            self.declare_var(v)
        if len(vars) > 1:
            names = " ".join(v.name for v in vars)
            self._send(f"(set-info :order-cluster ({names}))", expect="success")

    # ----- assertions and queries -----

    def assert_formula(self, f: Formula):
        f = self._maybe_expand(f)
        if f is TRUE:
            return
        self._ensure_declared(f)
        if f is FALSE:
            self._send("(assert false)", expect="success")
            return
        text = self._emitter.emit(f)
        self._send(f"(assert {text})", expect="success")

    def _maybe_expand(self, f: Formula) -> Formula:
        if not isinstance(f, Forall):
            return f
        if domain_size(f.vars) > self.config.expand_quantifier_threshold:
            return f
        instances = []
        for combo in domain_product(f.vars):
            instances.append(substitute(f.body, dict(zip(f.vars, combo))))
        return conj(instances)

    def check_sat(self, label: Optional[str] = None) -> str:
        self.check_count += 1
        self.commands.append("(check-sat)")
        self.proc.stdin.write("(check-sat)\n")
        self.proc.stdin.flush()
        reply = self._read_line()
        if reply not in ("sat", "unsat", "unknown"):
            raise ProtocolError(
                f"unexpected check-sat answer {reply!r}", "\n".join(self.commands[-8:])
            )
        self.commands[-1] = f"(check-sat) ; result: {reply}"
        if self.config.dump_dir and label:
            self._dump_transcript(label)
        return reply

    def _dump_transcript(self, label: str):
        path = pathlib.Path(self.config.dump_dir)
        path.mkdir(parents=True, exist_ok=True)
        body = []
        for cmd in self.commands:
            if " ; result: " in cmd:
                stripped, result = cmd.split(" ; result: ")
                body.append(stripped)
                body.append(f"; expect {result}")
            else:
                body.append(cmd)
        (path / f"{label}.smt2").write_text("\n".join(body) + "\n")

    def get_model(self, vars: list[Var]) -> Model:
        assignment = {}
        chunk = 200
        ordered = []
        seen = set()
        for v in vars:
            if v.name not in seen:
                seen.add(v.name)
                ordered.append(v)
                # unconstrained variables still need a value
                self.declare_var(v)
        for i in range(0, len(ordered), chunk):
            group = ordered[i : i + chunk]
            names = " ".join(v.name for v in group)
            self.commands.append(f"(get-value ({names}))")
            self.proc.stdin.write(f"(get-value ({names}))\n")
            self.proc.stdin.flush()
            form = self._read_form()
            if not isinstance(form, tuple):
                raise ProtocolError(f"bad get-value reply {form!r}")
            by_name = {v.name: v for v in group}
            for pair in form:
                name, raw = pair[0], pair[1]
                var = by_name.get(name)
                if var is None:
                    continue
                assignment[name] = _decode_value(var, raw)
        missing = [v.name for v in ordered if v.name not in assignment]
        if missing:
            raise ProtocolError(f"model misses {missing[:5]}")
        return Model(assignment)

    def push(self):
        self.depth += 1
        self._send("(push 1)", expect="success")

    def pop(self):
        if self.depth == 0:
            raise BackendError("pop at depth 0")
        self.depth -= 1
        self._send("(pop 1)", expect="success")

    def close(self):
        try:
            if self.proc.poll() is None:
                self._send("(exit)", expect=None)
                self.proc.stdin.close()
                self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _decode_value(var: Var, raw):
    if var.sort == BOOL:
        if raw in ("true", "false"):
            return raw == "true"
        raise ProtocolError(f"bad boolean value {raw!r} for {var.name}")
    if isinstance(var.sort, IntSort):
        if isinstance(raw, int):
            return raw
        if isinstance(raw, tuple) and len(raw) == 2 and raw[0] == "-":
            return -raw[1]
        raise ProtocolError(f"bad integer value {raw!r} for {var.name}")
    if isinstance(raw, str) and raw in var.sort.members:
        return raw
    # some solvers qualify constructors, e.g. (as Member Sort)
    if isinstance(raw, tuple) and len(raw) == 3 and raw[0] == "as":
        if raw[1] in var.sort.members:
            return raw[1]
    raise ProtocolError(f"bad enum value {raw!r} for {var.name}")
