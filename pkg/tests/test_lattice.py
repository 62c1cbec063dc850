import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from chkbox.lattice import (GE_ZERO, Eq, bound_eq, bound_le, mode_le, mode_meet, subtype,
                            type_eq, valuation_satisfies, wf_bounds, wf_cast_target, wf_nested)
from chkbox.syntax import INT, Bound, Mode, lit_bound, var_bound

from .helpers import ty
from .oracles import LE_TABLE, MEET_TABLE, random_instance, semantic_le

MODES = list(Mode)


@pytest.mark.parametrize("a, b", list(itertools.product(MODES, MODES)))
def test_mode_meet_table(a, b):
    assert mode_meet(a, b) is MEET_TABLE[(a, b)]


@pytest.mark.parametrize("a, b", list(itertools.product(MODES, MODES)))
def test_mode_le_table(a, b):
    assert mode_le(a, b) is LE_TABLE[(a, b)]


def test_mode_meet_laws():
    for a, b, c in itertools.product(MODES, repeat=3):
        assert mode_meet(a, b) is mode_meet(b, a)
        assert mode_meet(mode_meet(a, b), c) is mode_meet(a, mode_meet(b, c))
        assert mode_meet(a, Mode.U) is Mode.U
    for m in (Mode.C, Mode.U):
        assert mode_meet(Mode.C, m) is m
    assert mode_meet(Mode.T, Mode.C) is Mode.U


def test_mode_le_is_a_partial_order():
    for a, b, c in itertools.product(MODES, repeat=3):
        assert mode_le(a, a)
        if mode_le(a, b) and mode_le(b, a):
            assert a is b
        if mode_le(a, b) and mode_le(b, c):
            assert mode_le(a, c)


@pytest.mark.parametrize("theta, b, b2, expected", [
    ({}, lit_bound(3), lit_bound(5), True),
    ({"x": GE_ZERO}, lit_bound(3), var_bound("x", 3), True),
    ({"x": Eq(lit_bound(2))}, var_bound("x", 1), lit_bound(3), True),
    ({}, lit_bound(5), lit_bound(3), False),
    ({}, lit_bound(0), var_bound("x"), False),
    ({"x": Eq(var_bound("y", 1)), "y": Eq(var_bound("x", -1))}, var_bound("x"), lit_bound(0), False),
])
def test_bound_le_examples(theta, b, b2, expected):
    assert bound_le(theta, b, b2) is expected


def test_bound_le_sound_against_brute_force():
    rng = random.Random(1)
    proved = 0
    for _ in range(2000):
        theta, b, b2 = random_instance(rng)
        if bound_le(theta, b, b2):
            proved += 1
            assert semantic_le(theta, b, b2), (theta, b, b2)
    assert proved > 300


def test_valuation_satisfies():
    theta = {"x": GE_ZERO, "y": Eq(var_bound("x", 2))}
    assert valuation_satisfies(theta, {"x": 1, "y": 3})
    assert not valuation_satisfies(theta, {"x": -1, "y": 1})
    assert not valuation_satisfies(theta, {"x": 1, "y": 4})


def test_bound_eq_via_eq_fact():
    assert bound_eq({"x": Eq(lit_bound(5))}, var_bound("x"), lit_bound(5))


@pytest.mark.parametrize("theta, a, b, expected", [
    ({}, "int", "int", True),
    ({"x": Eq(lit_bound(5))}, "(array nt (0 (+ x 0)) int)", "(array nt (0 5) int)", True),
    ({}, "(fun (a) (int) int)", "(fun (b) (int) int)", True),
    ({}, "(ptr int c)", "(ptr int t)", False),
])
def test_type_eq(theta, a, b, expected):
    assert type_eq(theta, ty(a), ty(b)) is expected


@pytest.mark.parametrize("a, b, expected", [
    ("(ptr int t)", "(ptr int u)", True),
    ("(ptr (array nt (0 5) int) c)", "(ptr (array (1 3) int) c)", True),
    ("(ptr int t)", "(ptr int c)", False),
    ("(ptr int u)", "(ptr int t)", False),
    ("(ptr (array (0 3) int) c)", "(ptr (array nt (0 3) int) c)", False),
    ("(ptr int c)", "(ptr (array (0 1) int) c)", True),
    ("(ptr (array (0 2) int) c)", "(ptr int c)", True),
    ("(ptr (array (1 2) int) c)", "(ptr int c)", False),
])
def test_subtype_examples(a, b, expected):
    assert subtype({}, ty(a), ty(b)) is expected


_TYPES = ["int", "(ptr int c)", "(ptr int t)", "(ptr int u)",
          "(ptr (array (0 3) int) c)", "(ptr (array (1 2) int) c)", "(ptr (array nt (0 3) int) c)",
          "(ptr (array nt (0 1) int) c)", "(ptr (array (0 1) int) c)", "(ptr (array (0 3) int) t)",
          "(ptr (array (0 2) int) u)", "(ptr (fun (a) (int) int) c)"]


@given(st.sampled_from(_TYPES), st.sampled_from(_TYPES), st.sampled_from(_TYPES))
@settings(max_examples=300, deadline=None)
def test_subtype_reflexive_and_transitive(a, b, c):
    ta, tb, tc = ty(a), ty(b), ty(c)
    assert subtype({}, ta, ta)
    if subtype({}, ta, tb) and subtype({}, tb, tc):
        assert subtype({}, ta, tc)


@pytest.mark.parametrize("m, t, expected", [
    (Mode.C, "(ptr (array (0 3) (ptr int t)) c)", True),
    (Mode.C, "(ptr (array (0 3) (ptr int c)) t)", False),
    (Mode.U, "(ptr int c)", False),
    (Mode.U, "(ptr int t)", True),
    (Mode.C, "(ptr int u)", False),
])
def test_wf_nested(m, t, expected):
    assert wf_nested(m, ty(t)) is expected


def test_cast_targets_drop_only_the_outer_mode_premise():
    assert wf_cast_target(Mode.C, ty("(ptr int u)"))
    assert not wf_cast_target(Mode.C, ty("(ptr (ptr int c) u)"))


@pytest.mark.parametrize("gamma, t, expected", [
    ({"x": INT}, "(array nt (0 (+ x 0)) int)", True),
    ({}, "(array nt (0 (+ x 0)) int)", False),
    ({}, "(fun (n) ((ptr (array (0 (+ n 0)) int) t)) int)", True),
])
def test_wf_bounds(gamma, t, expected):
    assert wf_bounds(gamma, ty(t)) is expected


@given(st.integers(-6, 6), st.integers(-6, 6))
def test_literal_bounds_match_integer_order(a, b):
    assert bound_le({}, Bound(None, a), Bound(None, b)) is (a <= b)
