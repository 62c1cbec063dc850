import json
from dataclasses import replace

import pytest

from chkbox import machine
from chkbox.machine import FaultPolicy, StepResult
from chkbox.propcheck import (FORMS, PROPERTIES, GenConfig, check_non_crashing, check_non_exposure,
                              check_preservation, check_progress, check_simulation,
                              check_unchecked_preservation, coverage, forms, gen_well_typed,
                              generate_expr, generate_program, hash_seed, run_checks)
from chkbox.syntax import INT, Deref, Let, Lit, Mode, Program, Ptr, Unchecked, Var, \
    parse_program, print_program
from chkbox.typecheck import check_program, typecheck


def _p(text):
    return parse_program(text)


def test_generated_programs_typecheck():
    for unchecked in (False, True):
        for p in gen_well_typed(GenConfig(seed=8, count=80, unchecked=unchecked)):
            check_program(p)


def test_checked_corpus_has_no_blocks():
    for p in gen_well_typed(GenConfig(seed=8, count=150)):
        assert not forms(p) & {"Checked", "Unchecked"}


def test_depth_one_int_goal_is_a_literal_or_variable():
    for seed in range(20):
        e = generate_expr(INT, 1, seed)
        assert isinstance(e, Lit) and e.ty == INT


def test_generate_expr_is_well_typed():
    for seed in range(30):
        e = generate_expr(Ptr(INT, Mode.C), 4, seed)
        assert typecheck({}, {}, Mode.C, e) == Ptr(INT, Mode.C)


def test_generation_is_deterministic():
    cfg = GenConfig(seed=5)
    assert [print_program(generate_program(cfg, i)) for i in range(10)] == \
           [print_program(generate_program(cfg, i)) for i in range(10)]
    other = replace(cfg, seed=6)
    assert print_program(generate_program(cfg, 0)) != print_program(generate_program(other, 0))


def test_malloc_deref_chains_appear():
    programs = list(gen_well_typed(GenConfig(seed=1, count=100, max_depth=6)))
    assert sum(1 for p in programs if {"Malloc", "Deref"} <= forms(p) or {"Malloc", "Index"} <= forms(p)) >= 1


def test_coverage_guard_at_depth_six():
    n = 300
    counts = coverage(gen_well_typed(GenConfig(seed=2, count=n, max_depth=6)))
    counts += coverage(gen_well_typed(GenConfig(seed=2, count=n, max_depth=6, unchecked=True)))
    for form in FORMS:
        assert counts[form] >= 0.01 * 2 * n, (form, counts[form])


def test_progress_value_program_passes():
    assert check_progress(_p("(main (lit 1 int))")).ok


def test_progress_null_failure_is_not_stuck():
    assert check_progress(_p("(main (deref (lit 0 (ptr int c))))")).ok


def test_progress_flags_undefined_read_when_typing_is_bypassed():
    p = _p("(main (deref (lit 5 (ptr int c))))")
    with pytest.raises(Exception):
        check_program(p)
    v = check_progress(p)
    assert not v.ok and v.message.startswith("stuck")


def test_preservation_on_add_and_array_arithmetic():
    p = _p("(heap (c (1 (lit 1 int)) (2 (lit 2 int)) (3 (lit 0 int))))"
           " (main (deref (add (lit 1 (ptr (array (0 2) int) c)) (lit 1 int))))")
    check_program(p)
    assert check_preservation(p).ok


def test_preservation_on_let_int_substitution():
    p = _p("(heap (c (1 (lit 4 int)) (2 (lit 0 int))))"
           " (main (let n (lit 1 int) (deref (lit 1 (ptr (array nt (0 (+ n 0)) int) c)))))")
    check_program(p)
    assert check_preservation(p).ok


def test_unchecked_preservation_allows_checked_writes():
    p = _p("(heap (c (1 (lit 4 int)))) (main (assign (lit 1 (ptr int c)) (lit 9 int)))")
    assert check_unchecked_preservation(p).ok


def test_unchecked_write_through_tainted_pointer_keeps_region_c():
    p = _p("(heap (c (1 (lit 4 int))) (u (1 (lit 4 int))))"
           " (main (unchecked () (assign (lit 1 (ptr int t)) (lit 9 int))))")
    check_program(p)
    assert check_unchecked_preservation(p).ok


def test_unchecked_preservation_flags_region_c_write_when_typing_is_bypassed(monkeypatch):
    real = machine.compute_step

    def leaky(stack, heap, funs, redex):
        r = real(stack, heap, funs, redex)
        if r is not None and r.rule == "S-AssignT":
            return StepResult(r.stack, r.heap.write(Mode.C, 1, Lit(9, INT)), r.result, r.rule)
        return r

    monkeypatch.setattr(machine, "compute_step", leaky)
    p = _p("(heap (c (1 (lit 4 int))) (u (1 (lit 4 int))))"
           " (main (unchecked () (assign (lit 1 (ptr int t)) (lit 9 int))))")
    assert not check_unchecked_preservation(p).ok


def test_non_exposure_tainted_variable_passes():
    p = Program(main=Let("x", Lit(0, Ptr(INT, Mode.T)), Unchecked(("x",), Var("x"))))
    check_program(p)
    assert check_non_exposure(p).ok


def test_non_exposure_flags_smuggled_checked_pointer():
    p = Program(heap=_p("(heap (c (1 (lit 4 int)))) (main (lit 0 int))").heap,
                main=Let("x", Lit(1, Ptr(INT, Mode.C)), Unchecked(("x",), Deref(Var("x")))))
    with pytest.raises(Exception):
        check_program(p)
    v = check_non_exposure(p)
    assert not v.ok and "checked" in v.message


def test_non_exposure_exempts_nested_checked_blocks():
    p = _p("(heap (c (1 (lit 4 int)))) (main (unchecked () (checked () (deref (lit 1 (ptr int c))))))")
    check_program(p)
    assert check_non_exposure(p).ok


@pytest.mark.parametrize("rate", [0.0, 0.5, 1.0])
def test_non_crashing_under_faults(rate):
    cfg = GenConfig(seed=13, unchecked=True)
    for i in range(40):
        p = generate_program(cfg, i)
        assert check_non_crashing(p, policy=FaultPolicy(rate, hash_seed(0, i, rate))).ok


def test_non_crashing_at_rate_zero_matches_progress():
    cfg = GenConfig(seed=14, unchecked=True)
    for i in range(30):
        p = generate_program(cfg, i)
        assert check_non_crashing(p).ok == check_progress(p).ok


def test_simulation_add():
    v = check_simulation(_p("(main (add (lit 1 int) (lit 2 int)))"))
    assert v.ok and not v.inconclusive and v.pairs == 1


def test_simulation_null_failure():
    assert check_simulation(_p("(main (deref (lit 0 (ptr int c))))")).ok


def test_simulation_let_heavy_program_joins():
    p = _p("(heap (c (1 (lit 4 int)) (2 (lit 0 int))))"
           " (main (let x (add (add (lit 1 int) (lit 2 int)) (deref (lit 1 (ptr int c))))"
           " (let y (add (var x) (var x)) (add (var y) (lit 1 int)))))")
    v = check_simulation(p)
    assert v.ok and not v.inconclusive


def test_simulation_tiny_budget_is_inconclusive_not_a_failure():
    p = _p("(heap (c (1 (lit 4 int)) (2 (lit 0 int))))"
           " (main (let x (add (add (lit 1 int) (lit 2 int)) (deref (lit 1 (ptr int c)))) (var x)))")
    v = check_simulation(p, join_budget=1)
    assert v.ok and v.inconclusive


def _mutated_add(monkeypatch):
    real = machine.compute_step

    def wrong(stack, heap, funs, redex):
        r = real(stack, heap, funs, redex)
        if r is not None and r.rule == "S-Add":
            return StepResult(r.stack, r.heap, Lit(r.result.n + 1, r.result.ty), r.rule)
        return r

    monkeypatch.setattr(machine, "compute_step", wrong)


def test_mutation_control_detected_by_simulation(monkeypatch):
    _mutated_add(monkeypatch)
    assert not check_simulation(_p("(main (add (lit 1 int) (lit 2 int)))")).ok


def test_failures_replay_from_seed_and_index(monkeypatch):
    _mutated_add(monkeypatch)
    cfg = GenConfig(seed=9, count=30)
    reports = run_checks(["simulation"], cfg)
    failures = reports["simulation"].failures
    assert failures
    for f in failures[:3]:
        p = generate_program(replace(cfg, seed=f["seed"], unchecked=f["unchecked"]), f["index"])
        assert print_program(p) == f["program"]
        again = check_simulation(p)
        assert again.message == f["message"] and again.trace == f["trace"]


def test_run_checks_reports_every_property():
    reports = run_checks(PROPERTIES, GenConfig(seed=0, count=15))
    assert list(reports) == list(PROPERTIES)
    for r in reports.values():
        assert r.passed
    assert reports["progress"].cases == 15
    assert reports["noncrash"].cases == 30


def test_report_is_deterministic():
    a = run_checks(PROPERTIES, GenConfig(seed=4, count=10, fault_seed=3))
    b = run_checks(PROPERTIES, GenConfig(seed=4, count=10, fault_seed=3))
    dump = lambda rs: json.dumps([r.to_dict() for r in rs.values()], sort_keys=True)
    assert dump(a) == dump(b)


def test_zero_count_is_an_empty_pass():
    reports = run_checks(PROPERTIES, GenConfig(count=0))
    assert all(r.passed and r.cases == 0 for r in reports.values())


def test_hash_seed_is_stable():
    assert hash_seed(0, 0, 0.25) == 250
    assert hash_seed(1, 2, 1.0) != hash_seed(1, 3, 1.0)
