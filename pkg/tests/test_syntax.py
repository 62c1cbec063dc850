import pytest
from hypothesis import given, settings, strategies as st

from chkbox.propcheck import GenConfig, generate_program
from chkbox.syntax import (INT, Add, Array, Bound, Checked, Deref, Fun, Let, Lit, Mode, ParseError,
                           Ptr, Var, free_vars, lit_bound, parse_expr, parse_program, parse_type,
                           print_expr, print_program, print_type, subst_type, var_bound)


def test_parse_main_literal():
    p = parse_program("(main (lit 0 (ptr int c)))")
    assert p.main == Lit(0, Ptr(INT, Mode.C))


def test_source_ret_is_rejected():
    with pytest.raises(ParseError):
        parse_program("(main (ret x (lit 1 int) (var x)))")


def test_parse_let_with_add():
    e = parse_expr("(let x (add (lit 1 int) (lit 2 int)) (var x))")
    assert e == Let("x", Add(Lit(1, INT), Lit(2, INT)), Var("x"))


def test_print_forms():
    assert print_expr(Lit(5, INT)) == "(lit 5 int)"
    assert print_expr(Deref(Var("p"))) == "(deref (var p))"


@pytest.mark.parametrize("text", [
    "(main",
    "(main (lit x int))",
    "(main (lit 1 (ptr int q)))",
    "(main (frob 1))",
    "(main (var 1x))",
    "(main (lit 1 int)) (main (lit 2 int))",
    "(heap (c (0 (lit 1 int)))) (main (lit 0 int))",
])
def test_parse_errors(text):
    with pytest.raises(ParseError):
        parse_program(text)


def test_parse_error_reports_position():
    with pytest.raises(ParseError) as err:
        parse_program("(main\n  (frob 1))")
    assert "2" in str(err.value)


def test_comments_are_ignored():
    p = parse_program("; leading\n(main (lit 1 int)) ; trailing")
    assert p.main == Lit(1, INT)


def test_free_vars():
    assert free_vars(Var("x")) == {"x"}
    assert free_vars(Let("x", Lit(1, INT), Var("x"))) == set()
    assert free_vars(Checked(("x",), Add(Var("x"), Var("y")))) == {"x", "y"}


def test_free_vars_let_bound_scopes_body_only():
    assert free_vars(Let("x", Var("x"), Var("x"))) == {"x"}


def test_subst_type_normalizes_bounds():
    t = Ptr(Array(True, lit_bound(0), var_bound("x", 3), INT), Mode.C)
    assert subst_type(t, {"x": lit_bound(2)}) == Ptr(Array(True, lit_bound(0), lit_bound(5), INT), Mode.C)
    assert subst_type(INT, {"x": lit_bound(2)}) == INT


def test_subst_type_respects_fun_binders():
    t = parse_type("(ptr (fun (n) ((ptr (array nt (0 (+ n 0)) int) t)) int) t)")
    assert subst_type(t, {"n": lit_bound(7)}) == t


def test_subst_type_avoids_capture():
    t = parse_type("(ptr (fun (n) ((ptr (array (0 (+ n 0)) int) c) (ptr (array (0 (+ m 0)) int) c)) int) c)")
    out = subst_type(t, {"m": var_bound("n")})
    f = out.pointee
    assert isinstance(f, Fun)
    own, free = f.params
    assert own.pointee.hi.var == f.binders[0]
    assert free.pointee.hi == Bound("n", 0)
    assert f.binders[0] != "n"


@pytest.mark.parametrize("text", ["int", "(ptr int c)", "(ptr (array nt (0 (+ x 3)) int) t)",
                                  "(ptr (fun (a b) (int (ptr (array (0 (+ a 0)) int) c)) int) u)",
                                  "(ptr (array (-2 3) (ptr int t)) c)"])
def test_type_round_trip(text):
    assert print_type(parse_type(text)) == text


def _corpus(unchecked: bool, n: int = 60):
    cfg = GenConfig(seed=11, count=n, unchecked=unchecked)
    return [generate_program(cfg, i) for i in range(n)]


@pytest.mark.parametrize("unchecked", [False, True])
def test_round_trip_generator_corpus(unchecked):
    for p in _corpus(unchecked):
        text = print_program(p)
        assert parse_program(text) == p
        assert print_program(parse_program(text)) == text


@given(st.integers(0, 10_000), st.booleans())
@settings(max_examples=40, deadline=None)
def test_round_trip_property(index, unchecked):
    p = generate_program(GenConfig(seed=3, unchecked=unchecked), index)
    assert parse_program(print_program(p)) == p


@given(st.integers(-50, 50), st.sampled_from(["c", "t", "u"]))
def test_literal_round_trip(n, mode):
    e = parse_expr(f"(lit {n} (ptr (array (0 {abs(n)}) int) {mode}))")
    assert parse_expr(print_expr(e)) == e
