"""Mode lattice, bound reasoning, type equality, subtyping, well-formedness."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Union

from .syntax import (
    INT, Array, Bound, Fun, IntType, Mode, Ptr, fresh, rename_binders,
    type_free_vars,
)


def mode_le(a: Mode, b: Mode) -> bool:
    """t is below everything; c and u are only below themselves."""
    return a is Mode.T or a is b


def mode_meet(a: Mode, b: Mode) -> Mode:
    """Commutative meet: u absorbs, c is the unit, and t ∧ c = u."""
    # c ∧ c = c and t ∧ t = t; every other pair involves u or mixes t with c
    return a if a is b else Mode.U


# ----------------------------------------------------------- predicates


@dataclass(frozen=True, slots=True)
class GeZero:
    pass


@dataclass(frozen=True, slots=True)
class Eq:
    bound: Bound


GE_ZERO = GeZero()
Pred = Union[GeZero, Eq]
PredEnv = Mapping[str, Pred]


def bound_le(theta: PredEnv, b: Bound, b2: Bound, _used: frozenset = frozenset()) -> bool:
    """Syntax-directed b ≤Θ b2; each Eq fact is unfolded once per path."""
    if b.var is None and b2.var is None:
        return b.offset <= b2.offset
    if b.var is not None and b.var == b2.var and b.offset <= b2.offset:
        return True
    if (b.var is None and b2.var is not None and b.offset <= b2.offset
            and isinstance(theta.get(b2.var), GeZero)):
        return True
    if b.var is not None and b.var not in _used:
        p = theta.get(b.var)
        if isinstance(p, Eq) and bound_le(theta, p.bound.shift(b.offset), b2, _used | {b.var}):
            return True
    if b2.var is not None and b2.var not in _used:
        p = theta.get(b2.var)
        if isinstance(p, Eq) and bound_le(theta, b, p.bound.shift(b2.offset), _used | {b2.var}):
            return True
    return False


def bound_eq(theta: PredEnv, b: Bound, b2: Bound) -> bool:
    return bound_le(theta, b, b2) and bound_le(theta, b2, b)


def valuation_satisfies(theta: PredEnv, valuation: Mapping[str, int]) -> bool:
    """Whether a valuation is consistent with every fact in Θ."""
    for x, p in theta.items():
        if isinstance(p, GeZero):
            if valuation[x] < 0:
                return False
        else:
            rhs = p.bound.offset + (0 if p.bound.var is None else valuation[p.bound.var])
            if valuation[x] != rhs:
                return False
    return True


# --------------------------------------------------------- type equality


def type_eq(theta: PredEnv, t1, t2) -> bool:
    match t1, t2:
        case IntType(), IntType():
            return True
        case Ptr(a, m1), Ptr(b, m2):
            return m1 is m2 and type_eq(theta, a, b)
        case Array(nt1, lo1, hi1, e1), Array(nt2, lo2, hi2, e2):
            return (nt1 == nt2 and bound_eq(theta, lo1, lo2)
                    and bound_eq(theta, hi1, hi2) and type_eq(theta, e1, e2))
        case Fun(), Fun():
            if len(t1.binders) != len(t2.binders) or len(t1.params) != len(t2.params):
                return False
            f1, f2 = _common_binders(t1, t2)
            return (all(type_eq(theta, p, q) for p, q in zip(f1.params, f2.params))
                    and type_eq(theta, f1.ret, f2.ret))
    return False


def _common_binders(f1: Fun, f2: Fun) -> tuple[Fun, Fun]:
    if f1.binders == f2.binders:
        return f1, f2
    names = tuple(fresh("z") for _ in f1.binders)
    return rename_binders(f1, names), rename_binders(f2, names)


# --------------------------------------------------------------- subtype

_ZERO = Bound(None, 0)
_ONE = Bound(None, 1)


def subtype(theta: PredEnv, t1, t2) -> bool:
    """t1 ⊑Θ t2 on word types (closed under the t-to-u mode step)."""
    if type_eq(theta, t1, t2):
        return True
    if not (isinstance(t1, Ptr) and isinstance(t2, Ptr)):
        return False
    if not (t1.mode is t2.mode or (t1.mode is Mode.T and t2.mode is Mode.U)):
        return False
    return _pointee_sub(theta, t1.pointee, t2.pointee)


def _pointee_sub(theta: PredEnv, w1, w2) -> bool:
    if type_eq(theta, w1, w2):
        return True
    match w1, w2:
        case (IntType() | Ptr()), Array(False, lo, hi, elem):
            return (type_eq(theta, w1, elem) and bound_le(theta, _ZERO, lo)
                    and bound_le(theta, hi, _ONE))
        case Array(_, lo, hi, elem), (IntType() | Ptr()):
            return (type_eq(theta, elem, w2) and bound_le(theta, lo, _ZERO)
                    and bound_le(theta, _ONE, hi))
        case Array(nt1, lo1, hi1, e1), Array(nt2, lo2, hi2, e2):
            if nt2 and not nt1:
                return False
            return (type_eq(theta, e1, e2) and bound_le(theta, lo1, lo2)
                    and bound_le(theta, hi2, hi1))
        case Fun(), Fun():
            if len(w1.binders) != len(w2.binders) or len(w1.params) != len(w2.params):
                return False
            f1, f2 = _common_binders(w1, w2)
            return (all(subtype(theta, q, p) for p, q in zip(f1.params, f2.params))
                    and subtype(theta, f1.ret, f2.ret))
    return False


# -------------------------------------------------------- well-formedness


def wf_nested(m: Mode, t) -> bool:
    """No pointer nested under a pointer of a lower-permission mode."""
    match t:
        case IntType():
            return True
        case Ptr(pointee, xi):
            return mode_le(xi, m) and _wf_object(mode_meet(xi, m), pointee)
        case Array() | Fun():
            return _wf_object(m, t)
    return False


def wf_cast_target(m: Mode, t) -> bool:
    """wf_nested without the outer xi <= m premise, so t-to-u casts type in checked code."""
    if isinstance(t, Ptr):
        return _wf_object(mode_meet(t.mode, m), t.pointee)
    return wf_nested(m, t)


def _wf_object(m: Mode, w) -> bool:
    match w:
        case IntType() | Ptr():
            return wf_nested(m, w)
        case Array(_, _, _, elem):
            return wf_nested(m, elem)
        case Fun(binders, params, ret):
            inner = set().union(*(type_free_vars(p) for p in params)) | type_free_vars(ret)
            return (inner <= set(binders)
                    and all(wf_nested(m, p) for p in params) and wf_nested(m, ret))
    return False


def wf_bounds(gamma: Mapping, t) -> bool:
    """Every bound variable is int-typed in Γ or bound by a Fun binder."""
    match t:
        case IntType():
            return True
        case Ptr(pointee, _):
            return wf_bounds(gamma, pointee)
        case Array(_, lo, hi, elem):
            return all(b.var is None or gamma.get(b.var) == INT for b in (lo, hi)) \
                and wf_bounds(gamma, elem)
        case Fun(binders, params, ret):
            inner = dict(gamma)
            inner.update((x, INT) for x in binders)
            return all(wf_bounds(inner, p) for p in params) and wf_bounds(inner, ret)
    return False
