import pytest

from chkbox.compiler import compile_program
from chkbox.corec import (CAdd, CConfig, CFailure, CFunStore, CLit, CStuck, ErasedHeap, c_step,
                          erase_heap, erase_stack, eval_corec, join_key, parse_cexpr, parse_cprogram,
                          print_cexpr, print_cprogram, run_corec)
from chkbox.propcheck import GenConfig, generate_program
from chkbox.store import Heap
from chkbox.syntax import INT, Lit, Mode, Ptr, parse_program

from .helpers import FIXTURES


def _cfg(text, env=None, cells=None):
    return CConfig(dict(env or {}), ErasedHeap(dict(cells or {}), (10, 10)), parse_cexpr(text))


def test_erase_stack_drops_annotations():
    assert erase_stack({"x": Lit(3, INT)}) == {"x": 3}


def test_erase_stack_adds_shadow_bounds_for_arrays():
    from .helpers import expr
    env = erase_stack({"p": expr("(lit 4 (ptr (array nt (0 5) int) c))")})
    assert env == {"p": 4, "p#lo": 0, "p#hi": 5}


def test_erase_heap_drops_annotations_and_is_idempotent():
    h = Heap({(Mode.C, 1): Lit(7, Ptr(INT, Mode.C))})
    e = erase_heap(h)
    assert e.cells == {(Mode.C, 1): 7}
    assert erase_heap(Heap({k: Lit(v, INT) for k, v in e.cells.items()}, e.next_free)) == e


def test_add_steps_to_sum():
    assert c_step(_cfg("(add (lit 2) (lit 3))"), CFunStore()).expr == CLit(5)


def test_region_deref_reads_tagged_region():
    cfg = _cfg("(deref c (lit 4))", cells={(Mode.C, 4): 9, (Mode.U, 4): 1})
    assert c_step(cfg, CFunStore()).expr == CLit(9)


def test_assertnn_on_null_fails_with_null():
    assert c_step(_cfg("(assertnn 0 (deref u (lit 0)))"), CFunStore()) is CFailure.NULL


def test_assert_failure_is_bounds():
    assert c_step(_cfg("(assert (<= 1 0) (lit 1))"), CFunStore()) is CFailure.BOUNDS


def test_undefined_read_is_stuck():
    with pytest.raises(CStuck):
        c_step(_cfg("(deref c (lit 99))"), CFunStore())


def _compiled(main, heap="(heap (c (1 (lit 5 int)) (2 (lit 0 int))))"):
    return compile_program(parse_program(f"{heap} (main {main})"))


def test_compiled_add_program():
    assert eval_corec(_compiled("(add (lit 1 int) (lit 2 int))")).describe() == "value 3"


def test_compiled_null_deref():
    assert eval_corec(_compiled("(deref (lit 0 (ptr int c)))")).kind == "null"


def test_out_of_fuel():
    out = eval_corec(_compiled("(add (add (lit 1 int) (lit 1 int)) (lit 1 int))"), fuel=1)
    assert out.kind == "out-of-fuel"


def test_fuel_must_be_positive():
    with pytest.raises(ValueError):
        eval_corec(_compiled("(lit 1 int)"), fuel=0)


def test_scope_markers_are_transparent():
    out = eval_corec(_compiled("(unchecked () (add (lit 1 int) (lit 2 int)))"))
    assert out.value == 3


def test_arity_mismatch_is_stuck():
    text = (FIXTURES / "deref_array.corec").read_text(encoding="utf-8")
    tampered = text.replace("(lit 1) (lit 1) (lit 1) (lit 1))", "(lit 1) (lit 1) (lit 1))")
    assert tampered != text
    assert eval_corec(parse_cprogram(tampered)).kind == "stuck"


def test_program_round_trip_on_golden():
    text = (FIXTURES / "deref_array.corec").read_text(encoding="utf-8")
    assert print_cprogram(parse_cprogram(text)) + "\n" == text


@pytest.mark.parametrize("unchecked", [False, True])
def test_program_round_trip_on_generated_corpus(unchecked):
    cfg = GenConfig(seed=21, unchecked=unchecked)
    for i in range(40):
        prog = compile_program(generate_program(cfg, i))
        text = print_cprogram(prog)
        assert print_cprogram(parse_cprogram(text)) == text


def test_expression_round_trip():
    e = CAdd(CLit(1), CLit(2))
    assert parse_cexpr(print_cexpr(e)) == e


def test_evaluation_is_deterministic():
    prog = compile_program(generate_program(GenConfig(seed=2), 5))
    a, b = eval_corec(prog, keep_trace=True), eval_corec(prog, keep_trace=True)
    assert (a.kind, a.value, a.steps) == (b.kind, b.value, b.steps)
    assert [join_key(c) for c in a.trace] == [join_key(c) for c in b.trace]


def test_join_key_ignores_temporary_names():
    a = _cfg("(let t#1 (lit 3) (add (var t#1) (lit 1)))")
    b = _cfg("(let t#7 (lit 3) (add (var t#7) (lit 1)))")
    assert join_key(a) == join_key(b)


def test_join_key_substitutes_live_values():
    a = _cfg("(add (var x) (lit 1))", env={"x": 3})
    b = _cfg("(add (lit 3) (lit 1))")
    assert join_key(a) == join_key(b)


def test_join_key_distinguishes_heaps():
    a = _cfg("(lit 1)", cells={(Mode.C, 1): 1})
    b = _cfg("(lit 1)", cells={(Mode.C, 1): 2})
    assert join_key(a) != join_key(b)


def test_join_key_is_reflexive_on_a_trace():
    prog = compile_program(generate_program(GenConfig(seed=4), 9))
    out = eval_corec(prog, keep_trace=True)
    for c in out.trace:
        assert join_key(c) == join_key(CConfig(dict(c.env), c.heap, c.expr))


def test_run_corec_reports_failure_step_count():
    out = run_corec(_cfg("(assertnn 0 (lit 1))"), CFunStore(), 10)
    assert out.kind == "null" and out.steps == 1
