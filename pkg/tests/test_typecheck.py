import pytest

from chkbox.lattice import GE_ZERO, Eq
from chkbox.store import FunStore, Heap
from chkbox.syntax import INT, Array, Bound, Lit, Mode, lit_bound, parse_program
from chkbox.typecheck import (TypeCheckError, TypeContext, check_program, const_valid, is_checked,
                              size_of, typecheck)

from .helpers import FIXTURES, expr, ty
from .rule_fixtures import (PROGRAM_CASES, TYPING_CASES, all_t_rules, run_program_case,
                            run_typing)


@pytest.mark.parametrize("case", TYPING_CASES,
                         ids=lambda c: f"{c.rule}-{'accept' if c.expected else 'reject'}")
def test_typing_fixture(case):
    assert run_typing(case) is None


@pytest.mark.parametrize("rule", sorted(PROGRAM_CASES))
@pytest.mark.parametrize("accept", [True, False])
def test_program_fixture(rule, accept):
    assert run_program_case(rule, accept) is None


def test_every_t_rule_has_accepting_and_rejecting_fixtures():
    accepting = {c.rule for c in TYPING_CASES if c.expected is not None} | set(PROGRAM_CASES)
    rejecting = {c.rule for c in TYPING_CASES if c.expected is None} | set(PROGRAM_CASES)
    assert accepting == rejecting == all_t_rules()


def _tc(e, m=Mode.C, **gamma):
    return typecheck({x: ty(t) for x, t in gamma.items()}, {}, m, expr(e))


def test_checked_deref():
    assert _tc("(deref (var p))", p="(ptr int c)") == INT


def test_checked_pointer_deref_in_unchecked_mode_rejected():
    with pytest.raises(TypeCheckError) as err:
        _tc("(deref (var p))", Mode.U, p="(ptr int c)")
    assert err.value.rule == "T-Def"


def test_checked_block_rejects_checked_variable():
    with pytest.raises(TypeCheckError) as err:
        _tc("(checked (x) (var x))", x="(ptr int c)")
    assert err.value.rule == "T-Checked"


def test_tainted_to_unchecked_cast():
    assert _tc("(cast (ptr int u) (lit 3 (ptr int t)))") == ty("(ptr int u)")


def test_let_int_substitutes_into_result():
    t = _tc("(let x (lit 5 int) (lit 0 (ptr (array nt (0 (+ x 0)) int) c)))")
    assert t == ty("(ptr (array nt (0 5) int) c)")


def test_unchecked_body_may_use_tainted_pointer():
    assert _tc("(unchecked (x) (deref (var x)))", x="(ptr int t)") == INT


def test_error_path_records_child_indices():
    with pytest.raises(TypeCheckError) as err:
        _tc("(add (lit 1 int) (var nope))")
    assert err.value.path == (1,)


@pytest.mark.parametrize("t, expected", [
    ("int", False),
    ("(ptr int c)", True),
    ("(ptr (ptr int c) t)", False),
    ("(ptr int u)", False),
])
def test_is_checked(t, expected):
    assert is_checked(ty(t)) is expected


def _heap(*cells):
    return Heap({(Mode.C, a): v for a, v in cells})


def test_const_valid_null_and_int():
    h, f = Heap(), FunStore()
    assert const_valid({}, h, f, frozenset(), Mode.C, 0, ty("(ptr int c)"))
    assert const_valid({}, h, f, frozenset(), Mode.C, 7, INT)


def test_const_valid_needs_defined_cell():
    t = ty("(ptr int c)")
    assert const_valid({}, _heap((1, Lit(3, INT))), FunStore(), frozenset(), Mode.C, 1, t)
    assert not const_valid({}, Heap(), FunStore(), frozenset(), Mode.C, 1, t)


def test_const_valid_terminates_on_cyclic_heap():
    pp = ty("(ptr (ptr int c) c)")
    cycle = _heap((1, Lit(2, pp)), (2, Lit(1, pp)))
    assert const_valid({}, cycle, FunStore(), frozenset(), Mode.C, 1, pp)
    self_loop = _heap((1, Lit(1, pp)))
    deep = ty("(ptr (ptr (ptr (ptr int c) c) c) c)")
    assert const_valid({}, self_loop, FunStore(), frozenset(), Mode.C, 1, deep)
    dangling = _heap((1, Lit(3, pp)))
    assert not const_valid({}, dangling, FunStore(), frozenset(), Mode.C, 1, pp)


def test_const_valid_array_covers_every_cell():
    t = ty("(ptr (array (0 2) int) c)")
    assert const_valid({}, _heap((1, Lit(1, INT)), (2, Lit(2, INT))), FunStore(), frozenset(), Mode.C, 1, t)
    assert not const_valid({}, _heap((1, Lit(1, INT))), FunStore(), frozenset(), Mode.C, 1, t)


def test_const_valid_nt_array_needs_terminator_cell():
    t = ty("(ptr (array nt (0 1) int) c)")
    assert not const_valid({}, _heap((1, Lit(1, INT))), FunStore(), frozenset(), Mode.C, 1, t)
    assert const_valid({}, _heap((1, Lit(1, INT)), (2, Lit(0, INT))), FunStore(), frozenset(), Mode.C, 1, t)


def test_const_valid_resolves_bounds_through_theta():
    t = ty("(ptr (array (0 (+ n 0)) int) c)")
    h = _heap((1, Lit(1, INT)), (2, Lit(2, INT)))
    assert const_valid({"n": Eq(lit_bound(2))}, h, FunStore(), frozenset(), Mode.C, 1, t)
    assert not const_valid({"n": GE_ZERO}, h, FunStore(), frozenset(), Mode.C, 1, t)


@pytest.mark.parametrize("w, size", [
    (INT, 1),
    (Array(False, lit_bound(0), lit_bound(3), INT), 3),
    (Array(True, lit_bound(0), lit_bound(3), INT), 4),
    (Array(False, lit_bound(2), lit_bound(1), INT), 0),
])
def test_size_of(w, size):
    assert size_of(w) == size


def test_size_of_variable_bounds_is_an_error():
    with pytest.raises(ValueError):
        size_of(Array(False, lit_bound(0), Bound("n", 0), INT))


def test_size_matches_malloc_footprint():
    from .helpers import config
    from chkbox.machine import step
    for text in ("(array (0 3) int)", "(array nt (0 3) int)", "int"):
        cfg, funs = config(f"(malloc c {text})")
        before = cfg.heap.next_free[0]
        after = step(cfg, funs).after.heap.next_free[0]
        assert after - before == size_of(ty(text))


def test_fixture_program_typechecks():
    p = parse_program((FIXTURES / "deref_array.chk").read_text(encoding="utf-8"))
    assert check_program(p) == INT


def test_tainted_function_must_live_in_u_region():
    with pytest.raises(TypeCheckError) as err:
        check_program(parse_program(
            "(fundef (addr 1) (region c) (mode t) (ret int) (params (a int)) (body (var a)))"
            " (main (lit 0 int))"))
    assert err.value.rule == "T-FunDef"


def test_checked_literal_requires_valid_heap():
    p = parse_program("(heap (c (1 (lit 5 int)))) (main (deref (lit 1 (ptr int c))))")
    assert check_program(p) == INT
    with pytest.raises(TypeCheckError):
        check_program(parse_program("(main (deref (lit 1 (ptr int c))))"))


def test_typecheck_accepts_program_store():
    p = parse_program("(heap (c (1 (lit 5 int)))) (main (lit 0 int))")
    assert typecheck({}, {}, Mode.C, expr("(lit 1 (ptr int c))"), p) == ty("(ptr int c)")
    ctx = TypeContext(Heap.from_program(p), FunStore.from_program(p))
    assert typecheck({}, {}, Mode.C, expr("(lit 1 (ptr int c))"), ctx) == ty("(ptr int c)")
