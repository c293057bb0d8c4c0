import itertools
import pathlib
import random
import subprocess
import sys

import pytest

from glycanrules.backend import Session, SolverConfig, default_solver_config
from glycanrules.formula import (
    BOOL,
    EnumSort,
    FALSE,
    IntSort,
    TRUE,
    Var,
    VarRegistry,
    bool_ref,
    conj,
    disj,
    domain_product,
    enum_is,
    evaluate,
    exactly_one,
    forall,
    free_vars,
    iff,
    implies,
    int_eq,
    int_le,
    int_lt,
    not_,
    substitute,
)

COLOR = EnumSort("Color", ("Red", "Green", "Blue"))


def make_vars():
    reg = VarRegistry()
    b = reg.make("b", BOOL)
    c = reg.make("c", COLOR)
    x = reg.make("x", IntSort(0, 3))
    y = reg.make("y", IntSort(0, 3))
    return b, c, x, y


def test_constant_folding():
    b, c, x, y = make_vars()
    assert conj([]) is TRUE
    assert disj([]) is FALSE
    assert conj([TRUE, bool_ref(b)]) is not TRUE
    assert conj([FALSE, bool_ref(b)]) is FALSE
    assert not_(not_(bool_ref(b))).var is b
    assert implies(FALSE, bool_ref(b)) is TRUE
    assert int_lt(x, x) is FALSE
    assert int_le(x, x) is TRUE
    assert int_lt(1, 2) is TRUE
    assert enum_is("Red", "Red") is TRUE
    assert enum_is("Red", "Blue") is FALSE


def test_enum_member_validation():
    _, c, _, _ = make_vars()
    with pytest.raises(ValueError):
        enum_is(c, "Purple")


def test_evaluate_and_substitute_agree():
    rng = random.Random(5)
    b, c, x, y = make_vars()
    for _ in range(200):
        f = random_formula(rng, [b], [c], [x, y], depth=4)
        env = {
            b: rng.choice([False, True]),
            c: rng.choice(COLOR.members),
            x: rng.randrange(4),
            y: rng.randrange(4),
        }
        direct = evaluate(f, env)
        folded = substitute(f, env)
        assert folded in (TRUE, FALSE)
        assert (folded is TRUE) == direct


def random_formula(rng, bools, enums, ints, depth):
    if depth == 0 or rng.random() < 0.3:
        kind = rng.randrange(4)
        if kind == 0:
            return bool_ref(rng.choice(bools))
        if kind == 1:
            return enum_is(rng.choice(enums), rng.choice(COLOR.members))
        if kind == 2:
            op = rng.choice(["<", "<=", "="])
            lhs = rng.choice(ints + [rng.randrange(4)])
            rhs = rng.choice(ints + [rng.randrange(4)])
            from glycanrules.formula import int_cmp

            return int_cmp(op, lhs, rhs)
        return rng.choice([TRUE, FALSE])
    kind = rng.randrange(5)
    subs = [random_formula(rng, bools, enums, ints, depth - 1) for _ in range(2)]
    if kind == 0:
        return conj(subs)
    if kind == 1:
        return disj(subs)
    if kind == 2:
        return not_(subs[0])
    if kind == 3:
        return implies(subs[0], subs[1])
    return iff(subs[0], subs[1])


def test_exactly_one_semantics():
    b, c, x, y = make_vars()
    reg = VarRegistry()
    items = [reg.make(f"i{i}", BOOL) for i in range(3)]
    f = exactly_one([bool_ref(v) for v in items])
    for combo in itertools.product([False, True], repeat=3):
        env = dict(zip(items, combo))
        assert evaluate(f, env) == (sum(combo) == 1)
    assert exactly_one([]) is FALSE


def test_free_vars_excludes_bound():
    b, c, x, y = make_vars()
    inner = conj([bool_ref(b), int_lt(x, y)])
    f = forall((x,), implies(bool_ref(b), int_lt(x, y)))
    names = {v.name for v in free_vars(f)}
    assert b.name in names and y.name in names and x.name not in names


def solve_formulas(formulas, read_vars=(), config=None):
    with Session(config or SolverConfig()) as session:
        for f in formulas:
            session.assert_formula(f)
        res = session.check_sat()
        model = None
        if res == "sat" and read_vars:
            model = session.get_model(list(read_vars))
        return res, model


def test_session_basic_sat_unsat():
    b, c, x, y = make_vars()
    res, model = solve_formulas(
        [implies(bool_ref(b), enum_is(c, "Green")), bool_ref(b), int_lt(x, y)],
        [b, c, x, y],
    )
    assert res == "sat"
    assert model.value(b) is True
    assert model.value(c) == "Green"
    assert model.value(x) < model.value(y)

    res, _ = solve_formulas([int_lt(x, y), int_lt(y, x)])
    assert res == "unsat"


def test_assert_true_and_range_bounds():
    _, _, x, _ = make_vars()
    res, model = solve_formulas([TRUE, int_le(3, x)], [x])
    assert res == "sat"
    assert model.value(x) == 3  # hi bound of the range


def test_enum_lowering_maps_back_to_exactly_one_member():
    rng = random.Random(9)
    reg = VarRegistry()
    vars = [reg.make(f"e{i}", COLOR) for i in range(6)]
    constraints = [
        not_(enum_is(vars[0], "Red")),
        enum_is(vars[1], vars[0]),
        disj([enum_is(v, "Blue") for v in vars[2:]]),
    ]
    res, model = solve_formulas(constraints, vars)
    assert res == "sat"
    for v in vars:
        assert model.value(v) in COLOR.members
    assert model.value(vars[1]) == model.value(vars[0]) != "Red"


@pytest.mark.parametrize("trial", range(30))
def test_quantifier_native_vs_expanded_vs_truth_table(trial):
    rng = random.Random(100 + trial)
    reg = VarRegistry()
    b = reg.make("b", BOOL)
    c = reg.make("c", COLOR)
    x = reg.make("x", IntSort(0, 2))
    q = reg.make("q", IntSort(0, 2))
    body = random_formula(rng, [b], [c], [x, q], depth=3)
    uni = forall((q,), body)
    ground = random_formula(rng, [b], [c], [x], depth=2)
    # truth-table over the free variables
    free = [b, c, x]
    expected = any(
        evaluate(uni, dict(zip(free, combo))) and evaluate(ground, dict(zip(free, combo)))
        for combo in domain_product(tuple(free))
    )
    native = SolverConfig(expand_quantifier_threshold=0)
    expanded = SolverConfig(expand_quantifier_threshold=10_000)
    for config in (native, expanded):
        res, _ = solve_formulas([uni, ground], config=config)
        assert res == ("sat" if expected else "unsat"), f"config {config}"


def test_emission_is_deterministic(tmp_path):
    def emit_once(dump):
        reg = VarRegistry()
        x = reg.make("x", IntSort(0, 5))
        y = reg.make("y", IntSort(0, 5))
        shared = conj([int_lt(x, y), int_lt(0, y)])
        f = conj([disj([shared, int_eq(x, 3)]), implies(shared, int_le(x, 4))])
        cfg = SolverConfig(dump_dir=str(dump))
        with Session(cfg) as s:
            s.assert_formula(f)
            s.check_sat("probe")
        return (dump / "probe.smt2").read_text()

    a = emit_once(tmp_path / "a")
    b = emit_once(tmp_path / "b")
    assert a == b
    assert "(let ((l0 " in a  # the shared node went through a let


def test_transcript_replays_with_same_answers(tmp_path):
    reg = VarRegistry()
    x = reg.make("x", IntSort(0, 4))
    y = reg.make("y", IntSort(0, 4))
    cfg = SolverConfig(dump_dir=str(tmp_path))
    with Session(cfg) as s:
        s.assert_formula(int_lt(x, y))
        assert s.check_sat("q1") == "sat"
        s.push()
        s.assert_formula(int_lt(y, x))
        assert s.check_sat("q2") == "unsat"
        s.pop()
        assert s.check_sat("q3") == "sat"
    replayed = replay_transcript(tmp_path / "q3.smt2")
    assert replayed == ["sat", "unsat", "sat"]


def replay_transcript(path):
    text = pathlib.Path(path).read_text()
    expected = [
        line.split("; expect ", 1)[1]
        for line in text.splitlines()
        if line.startswith("; expect ")
    ]
    script = "\n".join(
        line for line in text.splitlines() if not line.startswith("; expect")
    )
    proc = subprocess.run(
        [sys.executable, "-m", "glycanrules.minismt"],
        input=script + "\n(exit)\n",
        capture_output=True,
        text=True,
        timeout=120,
    )
    answers = [
        line
        for line in proc.stdout.splitlines()
        if line in ("sat", "unsat", "unknown")
    ]
    assert len(answers) == len(expected)
    return answers


def test_push_pop_scoping():
    b, c, x, y = make_vars()
    with Session(SolverConfig()) as s:
        s.assert_formula(int_le(x, 1))
        assert s.check_sat() == "sat"
        s.push()
        s.assert_formula(int_le(2, x))
        assert s.check_sat() == "unsat"
        s.pop()
        assert s.check_sat() == "sat"


def test_missing_solver_binary_raises():
    from glycanrules.backend import SolverLaunchError

    cfg = SolverConfig(executable="/nonexistent/solver-binary")
    with pytest.raises(SolverLaunchError):
        Session(cfg)


def test_default_config_honors_env(monkeypatch):
    monkeypatch.setenv("GLYCANRULES_SOLVER", "/opt/tools/z3")
    cfg = default_solver_config()
    assert cfg.executable == "/opt/tools/z3"
    assert cfg.extra_args == ("-in", "-smt2")
    monkeypatch.setenv("GLYCANRULES_SOLVER_ARGS", "--foo --bar")
    cfg = default_solver_config()
    assert cfg.extra_args == ("--foo", "--bar")
