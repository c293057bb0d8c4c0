"""SMT-LIB2 stdin/stdout protocol front end for the bundled solver.

Reads commands, answers on stdout; supports the fragment the session layer
emits: set-logic/set-option/set-info, declare-datatypes (enumerations only),
declare-fun (zero-ary), assert, check-sat, get-value, push/pop (one level per
command), echo, reset, exit.
"""

from __future__ import annotations

import sys

from .engine import Engine, SolverError
from .sexpr import Reader, SexprError


class Session:
    def __init__(self, out):
        self.engine = Engine()
        self.out = out
        self.print_success = False
        self.timeout_ms = None
        self.done = False

    def reply(self, text: str):
        self.out.write(text + "\n")
        self.out.flush()

    def success(self):
        if self.print_success:
            self.reply("success")

    def error(self, message: str):
        self.reply(f'(error "{message}")')

    def handle(self, form):
        if not isinstance(form, tuple) or not form:
            self.error("malformed command")
            return
        head = form[0]
        try:
            if head == "set-option":
                self._set_option(form)
                self.success()
            elif head == "set-logic":
                self.success()
            elif head == "set-info":
                self._set_info(form)
                self.success()
            elif head == "declare-datatypes":
                self._declare_datatypes(form)
                self.success()
            elif head == "declare-fun":
                name, args, sort = form[1], form[2], form[3]
                if args != ():
                    raise SolverError("only zero-ary declarations supported")
                self.engine.declare_fun(name, sort)
                self.success()
            elif head == "declare-const":
                self.engine.declare_fun(form[1], form[2])
                self.success()
            elif head == "assert":
                term = expand_lets(form[1], {})
                self.engine.assert_term(term)
                self.success()
            elif head == "check-sat":
                self.reply(self.engine.check_sat(self.timeout_ms))
            elif head == "get-value":
                pairs = self.engine.get_values(list(form[1]))
                body = " ".join(f"({n} {v})" for n, v in pairs)
                self.reply(f"({body})")
            elif head == "push":
                for _ in range(form[1] if len(form) > 1 else 1):
                    self.engine.push()
                self.success()
            elif head == "pop":
                for _ in range(form[1] if len(form) > 1 else 1):
                    self.engine.pop()
                self.success()
            elif head == "echo":
                arg = form[1]
                text = arg[1] if isinstance(arg, tuple) and arg[0] == '"' else str(arg)
                self.reply(f'"{text}"')
            elif head == "reset":
                self.engine = Engine()
                self.timeout_ms = None
                self.success()
            elif head == "exit":
                self.success()
                self.done = True
            elif head == "get-info":
                self.reply(f'({form[1]} "glycanrules-minismt")')
            else:
                self.error(f"unsupported command {head}")
        except (SolverError, SexprError, IndexError, KeyError, TypeError) as exc:
            self.error(str(exc).replace('"', "'"))

    def _set_option(self, form):
        key = form[1]
        if key == ":print-success":
            self.print_success = form[2] == "true"
        elif key == ":timeout":
            self.timeout_ms = int(form[2])
        # other options are accepted and ignored

    def _set_info(self, form):
        if len(form) >= 3 and form[1] == ":order-cluster":
            names = list(form[2])
            self.engine.declare_cluster(names)

    def _declare_datatypes(self, form):
        # (declare-datatypes ((Name 0)) (((c1) (c2) ...)))
        sort_decls, ctor_lists = form[1], form[2]
        for (name, arity), ctors in zip(sort_decls, ctor_lists):
            if arity != 0:
                raise SolverError("parametric datatypes unsupported")
            members = []
            for ctor in ctors:
                if len(ctor) != 1:
                    raise SolverError("only enumeration constructors supported")
                members.append(ctor[0])
            self.engine.declare_enum(name, members)


def expand_lets(term, env):
    if isinstance(term, str):
        return env.get(term, term)
    if not isinstance(term, tuple):
        return term
    if term and term[0] == "let":
        bindings = term[1]
        inner = dict(env)
        for name, value in bindings:
            inner[name] = expand_lets(value, env)
        return expand_lets(term[2], inner)
    if term and term[0] == '"':
        return term
    return tuple(expand_lets(t, env) for t in term)


def main(argv=None) -> int:
    out = sys.stdout
    session = Session(out)
    reader = Reader()
    for line in sys.stdin:
        try:
            forms = reader.feed(line)
        except SexprError as exc:
            session.error(str(exc))
            continue
        for form in forms:
            session.handle(form)
            if session.done:
                return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
