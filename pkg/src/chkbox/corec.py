"""CoreC: the untyped target language, its interpreter, and erasure.

Memory operations carry the heap region they touch. Types survive only as
verification descriptors inside ``verify`` checks, which inspect region U
the same way the source machine verifies tainted pointers.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from typing import Mapping, Optional, Union

from .store import Heap
from .syntax import (
    INT, Array, Fun, Lit, Mode, ParseError, Ptr, _Atom, _List, _fail,
    _head, _ident, _int, _mode, _read_sexprs, _type, lit_bound, print_type,
    subst_type, type_free_vars,
)
from .typecheck import const_valid

CIDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_#]*\Z")


# ---------------------------------------------------------------- terms


@dataclass(frozen=True, slots=True)
class TLit:
    n: int


@dataclass(frozen=True, slots=True)
class TVar:
    name: str


@dataclass(frozen=True, slots=True)
class TAdd:
    left: "Term"
    right: "Term"


@dataclass(frozen=True, slots=True)
class TSub:
    left: "Term"
    right: "Term"


@dataclass(frozen=True, slots=True)
class TMax:
    left: "Term"
    right: "Term"


@dataclass(frozen=True, slots=True)
class TIf:
    cond: "Term"
    then: "Term"
    else_: "Term"


Term = Union[TLit, TVar, TAdd, TSub, TMax, TIf]


@dataclass(frozen=True, slots=True)
class Le:
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class Lt:
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class And:
    left: "Cond"
    right: "Cond"


Cond = Union[Le, Lt, And]


def t_add(a: Term, n: int) -> Term:
    """a + n with literal folding."""
    if n == 0:
        return a
    if type(a) is TLit:
        return TLit(a.n + n)
    return TAdd(a, TLit(n))


# ----------------------------------------------------------- expressions


@dataclass(frozen=True, slots=True)
class CLit:
    n: int


@dataclass(frozen=True, slots=True)
class CVar:
    name: str


@dataclass(frozen=True, slots=True)
class CAdd:
    left: "CExpr"
    right: "CExpr"


@dataclass(frozen=True, slots=True)
class CTerm:
    term: Term


@dataclass(frozen=True, slots=True)
class CLet:
    name: str
    bound: "CExpr"
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CRet:
    name: str
    saved: Optional[int]
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CIf:
    cond: "CExpr"
    then: "CExpr"
    else_: "CExpr"


@dataclass(frozen=True, slots=True)
class CDeref:
    region: Mode
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CAssign:
    region: Mode
    target: "CExpr"
    value: "CExpr"


@dataclass(frozen=True, slots=True)
class CMalloc:
    region: Mode
    array: bool
    nt: bool
    lo: Term
    hi: Term


@dataclass(frozen=True, slots=True)
class CCall:
    region: Mode
    fn: "CExpr"
    args: tuple


@dataclass(frozen=True, slots=True)
class CAssert:
    cond: Cond
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CAssertNN:
    addr: Term
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CVerify:
    """Tainted-pointer verification; lo/hi are None for a single pointer."""
    addr: Term
    elem: object
    lo: Optional[Term]
    hi: Optional[Term]
    nt: bool
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CVerifyFun:
    addr: Term
    sig: Fun
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CWiden:
    """Raise a shadow bound in place, then continue."""
    name: str
    term: Term
    body: "CExpr"


@dataclass(frozen=True, slots=True)
class CStrlen:
    region: Mode
    name: str
    hi_name: str


@dataclass(frozen=True, slots=True)
class CScope:
    """Checked/unchecked block marker; no runtime effect beyond its exit step."""
    region: Mode
    body: "CExpr"


CExpr = Union[CLit, CVar, CAdd, CTerm, CLet, CRet, CIf, CDeref, CAssign, CMalloc,
              CCall, CAssert, CAssertNN, CVerify, CVerifyFun, CWiden, CStrlen, CScope]


# -------------------------------------------------------------- programs


@dataclass(frozen=True)
class CFunDef:
    params: tuple
    body: CExpr
    mode: Mode
    sig: Fun  # kept only for verifyfun checks

    def fun_type(self) -> Fun:
        return self.sig


@dataclass(frozen=True)
class CFunStore:
    defs: dict = field(default_factory=dict)  # (region, addr) -> CFunDef

    def get(self, region: Mode, addr: int) -> Optional[CFunDef]:
        return self.defs.get((region, addr))


@dataclass(frozen=True)
class ErasedHeap:
    cells: dict = field(default_factory=dict)  # (region, addr) -> int
    next_free: tuple = (1, 1)

    def get(self, region: Mode, addr: int) -> Optional[Lit]:
        v = self.cells.get((region, addr))
        return None if v is None else Lit(v, INT)

    def defined(self, region: Mode, addr: int) -> bool:
        return (region, addr) in self.cells

    def write(self, region: Mode, addr: int, value: int) -> "ErasedHeap":
        cells = dict(self.cells)
        cells[(region, addr)] = value
        return ErasedHeap(cells, self.next_free)

    def alloc(self, region: Mode, size: int) -> tuple[int, "ErasedHeap"]:
        slot = 0 if region is Mode.C else 1
        base = self.next_free[slot]
        cells = dict(self.cells)
        for i in range(size):
            cells[(region, base + i)] = 0
        marks = list(self.next_free)
        marks[slot] = base + max(size, 1)
        return base, ErasedHeap(cells, tuple(marks))

    def key(self) -> tuple:
        return (tuple(sorted((r.value, a, v) for (r, a), v in self.cells.items())),
                self.next_free)


@dataclass(frozen=True)
class CProgram:
    funs: CFunStore
    heap: ErasedHeap
    main: CExpr


# --------------------------------------------------------------- erasure


def shadow_names(x: str) -> tuple[str, str]:
    return f"{x}#lo", f"{x}#hi"


def erase_heap(h: Heap) -> ErasedHeap:
    return ErasedHeap({k: v.n for k, v in h.cells.items()}, h.next_free)


def erase_stack(stack: Mapping[str, Lit]) -> dict:
    """Integer stack plus the shadow bounds of every array pointer."""
    env = {}
    for x, v in stack.items():
        env[x] = v.n
        env.update(shadow_values(x, v.ty))
    return env


def shadow_values(x: str, t) -> dict:
    if isinstance(t, Ptr) and isinstance(t.pointee, Array):
        w = t.pointee
        if w.lo.var is None and w.hi.var is None:
            lo, hi = shadow_names(x)
            return {lo: w.lo.offset, hi: w.hi.offset}
    return {}


# ------------------------------------------------------------ evaluation


class CFailure(enum.Enum):
    NULL = "null"
    BOUNDS = "bounds"


class CStuck(Exception):
    pass


def eval_term(t: Term, env: Mapping[str, int]) -> int:
    match t:
        case TLit(n):
            return n
        case TVar(x):
            if x not in env:
                raise CStuck(f"unbound variable {x}")
            return env[x]
        case TAdd(a, b):
            return eval_term(a, env) + eval_term(b, env)
        case TSub(a, b):
            return eval_term(a, env) - eval_term(b, env)
        case TMax(a, b):
            return max(eval_term(a, env), eval_term(b, env))
        case TIf(c, a, b):
            return eval_term(a, env) if eval_term(c, env) != 0 else eval_term(b, env)
    raise CStuck(f"not a term: {t!r}")


def eval_cond(c: Cond, env) -> bool:
    match c:
        case Le(a, b):
            return eval_term(a, env) <= eval_term(b, env)
        case Lt(a, b):
            return eval_term(a, env) < eval_term(b, env)
        case And(a, b):
            return eval_cond(a, env) and eval_cond(b, env)
    raise CStuck(f"not a condition: {c!r}")


def close_with_env(t, env: Mapping[str, int]):
    fv = type_free_vars(t)
    if not fv:
        return t
    if not fv <= env.keys():
        raise CStuck("verification type mentions unbound variables")
    return subst_type(t, {x: lit_bound(env[x]) for x in fv})


def is_cvalue(e) -> bool:
    return type(e) is CLit


def c_decompose(e: CExpr) -> Optional[tuple[list, CExpr]]:
    if type(e) is CLit:
        return None
    path = []
    while True:
        t = type(e)
        if t is CAdd or t is CAssign:
            a, b = (e.left, e.right) if t is CAdd else (e.target, e.value)
            if type(a) is not CLit:
                path.append((e, 0)); e = a; continue
            if type(b) is not CLit:
                path.append((e, 1)); e = b; continue
            return path, e
        if t is CLet:
            if type(e.bound) is not CLit:
                path.append((e, 0)); e = e.bound; continue
            return path, e
        if t is CRet or t is CScope or t is CDeref:
            if type(e.body) is not CLit:
                path.append((e, 0)); e = e.body; continue
            return path, e
        if t is CIf:
            if type(e.cond) is not CLit:
                path.append((e, 0)); e = e.cond; continue
            return path, e
        if t is CCall:
            if type(e.fn) is not CLit:
                path.append((e, 0)); e = e.fn; continue
            for i, a in enumerate(e.args):
                if type(a) is not CLit:
                    path.append((e, i + 1)); e = a; break
            else:
                return path, e
            continue
        return path, e


def _replace(node, i, child):
    t = type(node)
    if t is CAdd:
        return CAdd(child, node.right) if i == 0 else CAdd(node.left, child)
    if t is CAssign:
        return CAssign(node.region, child, node.value) if i == 0 else CAssign(node.region, node.target, child)
    if t is CLet:
        return CLet(node.name, child, node.body)
    if t is CRet:
        return CRet(node.name, node.saved, child)
    if t is CScope:
        return CScope(node.region, child)
    if t is CDeref:
        return CDeref(node.region, child)
    if t is CIf:
        return CIf(child, node.then, node.else_)
    if t is CCall:
        if i == 0:
            return CCall(node.region, child, node.args)
        args = list(node.args)
        args[i - 1] = child
        return CCall(node.region, node.fn, tuple(args))
    raise ValueError(f"no evaluation context through {t.__name__}")


def c_plug(path, e):
    for node, i in reversed(path):
        e = _replace(node, i, e)
    return e


@dataclass(frozen=True)
class CConfig:
    env: Mapping[str, int]
    heap: ErasedHeap
    expr: CExpr


def _set(env, x, v):
    env = dict(env)
    if v is None:
        env.pop(x, None)
    else:
        env[x] = v
    return env


def c_compute(env, heap: ErasedHeap, funs: CFunStore, r: CExpr):
    """(env', heap', result) for one redex; raises CStuck when nothing applies."""
    match r:
        case CVar(x):
            if x not in env:
                raise CStuck(f"unbound variable {x}")
            return env, heap, CLit(env[x])
        case CAdd(CLit(a), CLit(b)):
            return env, heap, CLit(a + b)
        case CTerm(t):
            return env, heap, CLit(eval_term(t, env))
        case CLet(x, CLit(v), body):
            return _set(env, x, v), heap, CRet(x, env.get(x), body)
        case CRet(x, saved, CLit() as v):
            return _set(env, x, saved), heap, v
        case CScope(_, CLit() as v):
            return env, heap, v
        case CIf(CLit(n), a, b):
            return env, heap, a if n != 0 else b
        case CDeref(region, CLit(n)):
            if not heap.defined(region, n):
                raise CStuck(f"read of undefined cell {region.value}:{n}")
            return env, heap, CLit(heap.cells[(region, n)])
        case CAssign(region, CLit(n), CLit(v)):
            if not heap.defined(region, n):
                raise CStuck(f"write to undefined cell {region.value}:{n}")
            return env, heap.write(region, n, v), CLit(v)
        case CMalloc(region, array, nt, lo, hi):
            if array:
                lo_v, hi_v = eval_term(lo, env), eval_term(hi, env)
                if lo_v != 0 or hi_v <= 0:
                    raise CStuck("malloc of an empty or offset block")
                size = hi_v + (1 if nt else 0)
            else:
                size = 1
            addr, heap2 = heap.alloc(region, size)
            return env, heap2, CLit(addr)
        case CCall(region, CLit(n), args) if all(type(a) is CLit for a in args):
            fd = funs.get(region, n)
            if fd is None:
                raise CStuck(f"call of undefined function {region.value}:{n}")
            if len(fd.params) != len(args):
                raise CStuck(f"arity mismatch calling {region.value}:{n}")
            body = fd.body
            for x, a in reversed(list(zip(fd.params, args))):
                body = CLet(x, a, body)
            return env, heap, body
        case CAssert(c, body):
            return env, heap, body if eval_cond(c, env) else CFailure.BOUNDS
        case CAssertNN(a, body):
            return env, heap, body if eval_term(a, env) != 0 else CFailure.NULL
        case CVerify(a, elem, lo, hi, nt, body):
            n = eval_term(a, env)
            elem = close_with_env(elem, env)
            if lo is None:
                t = Ptr(elem, Mode.T)
            else:
                t = Ptr(Array(nt, lit_bound(eval_term(lo, env)), lit_bound(eval_term(hi, env)), elem), Mode.T)
            ok = const_valid({}, heap, funs, frozenset(), Mode.U, n, t)
            return env, heap, body if ok else CFailure.BOUNDS
        case CVerifyFun(a, sig, body):
            ok = const_valid({}, heap, funs, frozenset(), Mode.U, eval_term(a, env), Ptr(sig, Mode.T))
            return env, heap, body if ok else CFailure.BOUNDS
        case CWiden(x, t, body):
            if x not in env:
                raise CStuck(f"widening unbound shadow {x}")
            return _set(env, x, max(env[x], eval_term(t, env))), heap, body
        case CStrlen(region, x, hx):
            if x not in env or hx not in env:
                raise CStuck(f"strlen of unbound {x}")
            n, k = env[x], 0
            while True:
                v = heap.cells.get((region, n + k))
                if v is None:
                    return env, heap, CFailure.BOUNDS
                if v == 0:
                    break
                k += 1
            return _set(env, hx, max(env[hx], k)), heap, CLit(k)
    raise CStuck(f"no rule for {print_cexpr(r)}")


def c_step(cfg: CConfig, funs: CFunStore) -> Union[None, CConfig, CFailure]:
    """Next configuration, a failure, or None at a value; raises CStuck."""
    d = c_decompose(cfg.expr)
    if d is None:
        return None
    path, redex = d
    env, heap, result = c_compute(cfg.env, cfg.heap, funs, redex)
    if isinstance(result, CFailure):
        return result
    return CConfig(env, heap, c_plug(path, result))


@dataclass
class COutcome:
    kind: str  # value | null | bounds | stuck | out-of-fuel
    value: Optional[int]
    steps: int
    final: CConfig
    message: str = ""
    trace: list = field(default_factory=list)

    def describe(self) -> str:
        return f"value {self.value}" if self.kind == "value" else self.kind


def run_corec(cfg: CConfig, funs: CFunStore, fuel: int, keep_trace: bool = False) -> COutcome:
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    trace = []
    for i in range(fuel):
        try:
            nxt = c_step(cfg, funs)
        except CStuck as err:
            return COutcome("stuck", None, i, cfg, str(err), trace)
        if nxt is None:
            return COutcome("value", cfg.expr.n, i, cfg, trace=trace)
        if isinstance(nxt, CFailure):
            return COutcome(nxt.value, None, i + 1, cfg, trace=trace)
        if keep_trace:
            trace.append(nxt)
        cfg = nxt
    if type(cfg.expr) is CLit:
        return COutcome("value", cfg.expr.n, fuel, cfg, trace=trace)
    return COutcome("out-of-fuel", None, fuel, cfg, trace=trace)


def eval_corec(p: CProgram, fuel: int = 10_000, keep_trace: bool = False) -> COutcome:
    return run_corec(CConfig({}, p.heap, p.main), p.funs, fuel, keep_trace)


# -------------------------------------------------------------- join key


def _spine_frames(e) -> list:
    d = c_decompose(e)
    if d is None:
        return []
    path, redex = d
    frames = [n for n, _ in path if type(n) is CRet]
    return frames + [redex] if type(redex) is CRet else frames


def join_key(cfg: Union[CConfig, tuple]) -> tuple:
    """Configuration with live stack values substituted in, ret frames
    dropped and binders renamed by nesting depth, paired with the heap.

    Two configurations with equal keys run identically from here on, so
    orbit intersection on keys decides whether two runs have joined.
    """
    if isinstance(cfg, tuple):  # (failure, heap)
        failure, heap = cfg
        return ("fail", failure.value, heap.key())
    env = dict(cfg.env)
    inner = {}
    for frame in reversed(_spine_frames(cfg.expr)):
        inner[id(frame)] = env.get(frame.name)
        if frame.saved is None:
            env.pop(frame.name, None)
        else:
            env[frame.name] = frame.saved
    return (_key(cfg.expr, env, inner, 0), cfg.heap.key())


def _lookup(scope, x):
    return scope.get(x, ("free", x))


def _tkey(t, scope):
    """Term with variables resolved; closed arithmetic folds to an int."""
    match t:
        case TLit(n):
            return n
        case TVar(x):
            return _lookup(scope, x)
        case TIf(c, a, b):
            k = (_tkey(c, scope), _tkey(a, scope), _tkey(b, scope))
            if type(k[0]) is int:
                return k[1] if k[0] != 0 else k[2]
            return ("if", *k)
    a, b = _tkey(t.left, scope), _tkey(t.right, scope)
    if type(a) is int and type(b) is int:
        return {TAdd: a + b, TSub: a - b, TMax: max(a, b)}[type(t)]
    return (type(t).__name__, a, b)


def _ckey(c, scope):
    match c:
        case Le(a, b):
            return ("<=", _tkey(a, scope), _tkey(b, scope))
        case Lt(a, b):
            return ("<", _tkey(a, scope), _tkey(b, scope))
        case And(a, b):
            return ("and", _ckey(a, scope), _ckey(b, scope))


def _ty_key(t, scope):
    fv = type_free_vars(t)
    resolved = tuple(sorted((x, repr(_lookup(scope, x))) for x in fv))
    return (print_type(t), resolved)


def _key(e, scope, inner, depth):
    k = lambda sub: _key(sub, scope, inner, depth)  # noqa: E731
    match e:
        case CLit(n):
            return n
        case CVar(x):
            v = _lookup(scope, x)
            return v if type(v) is int else ("var", v)
        case CAdd(a, b):
            return ("add", k(a), k(b))
        case CTerm(t):
            return ("term", _tkey(t, scope))
        case CLet(x, b, body):
            s2 = dict(scope)
            s2[x] = ("bound", depth)
            return ("let", k(b), _key(body, s2, inner, depth + 1))
        case CRet(x, _, body):
            if id(e) in inner:
                s2 = dict(scope)
                v = inner[id(e)]
                if v is None:
                    s2.pop(x, None)
                else:
                    s2[x] = v
                return _key(body, s2, inner, depth)
            return ("ret", x, k(body))
        case CIf(c, a, b):
            return ("if", k(c), k(a), k(b))
        case CDeref(r, a):
            return ("deref", r.value, k(a))
        case CAssign(r, a, b):
            return ("assign", r.value, k(a), k(b))
        case CMalloc(r, array, nt, lo, hi):
            return ("malloc", r.value, array, nt, _tkey(lo, scope), _tkey(hi, scope))
        case CCall(r, f, args):
            return ("call", r.value, k(f), tuple(k(a) for a in args))
        case CAssert(c, body):
            return ("assert", _ckey(c, scope), k(body))
        case CAssertNN(a, body):
            return ("assertnn", _tkey(a, scope), k(body))
        case CVerify(a, elem, lo, hi, nt, body):
            bounds = None if lo is None else (_tkey(lo, scope), _tkey(hi, scope))
            return ("verify", _tkey(a, scope), _ty_key(elem, scope), bounds, nt, k(body))
        case CVerifyFun(a, sig, body):
            return ("verifyfun", _tkey(a, scope), print_type(sig), k(body))
        case CWiden(x, t, body):
            return ("widen", _lookup(scope, x), _tkey(t, scope), k(body))
        case CStrlen(r, x, hx):
            return ("strlen", r.value, _lookup(scope, x), _lookup(scope, hx))
        case CScope(r, body):
            return ("scope", r.value, k(body))
    raise TypeError(f"not a CoreC expression: {e!r}")


# -------------------------------------------------------------- printing


def print_term(t: Term) -> str:
    match t:
        case TLit(n):
            return str(n)
        case TVar(x):
            return x
        case TAdd(a, b):
            return f"(+ {print_term(a)} {print_term(b)})"
        case TSub(a, b):
            return f"(- {print_term(a)} {print_term(b)})"
        case TMax(a, b):
            return f"(max {print_term(a)} {print_term(b)})"
        case TIf(c, a, b):
            return f"(if {print_term(c)} {print_term(a)} {print_term(b)})"
    raise TypeError(f"not a term: {t!r}")


def print_cond(c: Cond) -> str:
    match c:
        case Le(a, b):
            return f"(<= {print_term(a)} {print_term(b)})"
        case Lt(a, b):
            return f"(< {print_term(a)} {print_term(b)})"
        case And(a, b):
            return f"(and {print_cond(a)} {print_cond(b)})"
    raise TypeError(f"not a condition: {c!r}")


def print_cexpr(e: CExpr) -> str:
    p = print_cexpr
    match e:
        case CLit(n):
            return f"(lit {n})"
        case CVar(x):
            return f"(var {x})"
        case CAdd(a, b):
            return f"(add {p(a)} {p(b)})"
        case CTerm(t):
            return f"(term {print_term(t)})"
        case CLet(x, b, body):
            return f"(let {x} {p(b)} {p(body)})"
        case CRet(x, saved, body):
            return f"(ret {x} {'undef' if saved is None else saved} {p(body)})"
        case CIf(c, a, b):
            return f"(if {p(c)} {p(a)} {p(b)})"
        case CDeref(r, a):
            return f"(deref {r.value} {p(a)})"
        case CAssign(r, a, b):
            return f"(assign {r.value} {p(a)} {p(b)})"
        case CMalloc(r, array, nt, lo, hi):
            if not array:
                return f"(malloc {r.value} word)"
            flag = "nt " if nt else ""
            return f"(malloc {r.value} (array {flag}({print_term(lo)} {print_term(hi)})))"
        case CCall(r, f, args):
            return f"(call {r.value} " + " ".join(p(a) for a in (f, *args)) + ")"
        case CAssert(c, body):
            return f"(assert {print_cond(c)} {p(body)})"
        case CAssertNN(a, body):
            return f"(assertnn {print_term(a)} {p(body)})"
        case CVerify(a, elem, lo, hi, nt, body):
            if lo is None:
                shape = f"(single {print_type(elem)})"
            else:
                flag = "nt " if nt else ""
                shape = f"(array {flag}({print_term(lo)} {print_term(hi)}) {print_type(elem)})"
            return f"(verify {print_term(a)} {shape} {p(body)})"
        case CVerifyFun(a, sig, body):
            return f"(verifyfun {print_term(a)} {print_type(sig)} {p(body)})"
        case CWiden(x, t, body):
            return f"(widen {x} {print_term(t)} {p(body)})"
        case CStrlen(r, x, hx):
            return f"(strlen {r.value} {x} {hx})"
        case CScope(r, body):
            return f"(scope {r.value} {p(body)})"
    raise TypeError(f"not a CoreC expression: {e!r}")


def print_cprogram(prog: CProgram) -> str:
    out = []
    for (region, addr), fd in sorted(prog.funs.defs.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
        out.append(f"(cfun (addr {addr}) (region {region.value}) (mode {fd.mode.value})"
                   f" (sig {print_type(fd.sig)}) (params {' '.join(fd.params)})\n"
                   f"  (body {print_cexpr(fd.body)}))")
    blocks = []
    for region in (Mode.C, Mode.U):
        cells = sorted((a, v) for (r, a), v in prog.heap.cells.items() if r is region)
        if cells:
            blocks.append(f"({region.value} " + " ".join(f"({a} {v})" for a, v in cells) + ")")
    if blocks:
        out.append("(heap " + " ".join(blocks) + ")")
    out.append(f"(main {print_cexpr(prog.main)})")
    return "\n".join(out) + "\n"


# --------------------------------------------------------------- parsing

_REGIONS = (Mode.C, Mode.U)


def _cident(node) -> str:
    return _ident(node, CIDENT)


def _term(node) -> Term:
    if isinstance(node, _Atom):
        if CIDENT.match(node.text):
            return TVar(node.text)
        return TLit(_int(node))
    head, args = _head(node, "term")
    arity = {"+": 2, "-": 2, "max": 2, "if": 3}
    if head not in arity or len(args) != arity[head]:
        _fail(node, f"bad term {head!r}", "+|-|max|if")
    parts = [_term(a) for a in args]
    return {"+": TAdd, "-": TSub, "max": TMax, "if": TIf}[head](*parts)


def _cond(node) -> Cond:
    head, args = _head(node, "condition")
    if head not in ("<=", "<", "and") or len(args) != 2:
        _fail(node, f"bad condition {head!r}", "<=|<|and")
    if head == "and":
        return And(_cond(args[0]), _cond(args[1]))
    return (Le if head == "<=" else Lt)(_term(args[0]), _term(args[1]))


def _need(node, args, n, form):
    if len(args) != n:
        _fail(node, f"'{form}' takes {n} arguments, got {len(args)}")


def _cexpr(node) -> CExpr:
    head, args = _head(node, "CoreC expression")
    match head:
        case "lit":
            _need(node, args, 1, head)
            return CLit(_int(args[0]))
        case "var":
            _need(node, args, 1, head)
            return CVar(_cident(args[0]))
        case "add":
            _need(node, args, 2, head)
            return CAdd(_cexpr(args[0]), _cexpr(args[1]))
        case "term":
            _need(node, args, 1, head)
            return CTerm(_term(args[0]))
        case "let":
            _need(node, args, 3, head)
            return CLet(_cident(args[0]), _cexpr(args[1]), _cexpr(args[2]))
        case "ret":
            _need(node, args, 3, head)
            saved = None if isinstance(args[1], _Atom) and args[1].text == "undef" else _int(args[1])
            return CRet(_cident(args[0]), saved, _cexpr(args[2]))
        case "if":
            _need(node, args, 3, head)
            return CIf(*(_cexpr(a) for a in args))
        case "deref":
            _need(node, args, 2, head)
            return CDeref(_mode(args[0], _REGIONS), _cexpr(args[1]))
        case "assign":
            _need(node, args, 3, head)
            return CAssign(_mode(args[0], _REGIONS), _cexpr(args[1]), _cexpr(args[2]))
        case "malloc":
            _need(node, args, 2, head)
            region = _mode(args[0], _REGIONS)
            if isinstance(args[1], _Atom) and args[1].text == "word":
                return CMalloc(region, False, False, TLit(0), TLit(1))
            h, rest = _head(args[1], "word or (array ...)")
            nt = bool(rest) and isinstance(rest[0], _Atom) and rest[0].text == "nt"
            rest = rest[1:] if nt else rest
            if h != "array" or len(rest) != 1 or not isinstance(rest[0], _List) or len(rest[0].items) != 2:
                _fail(args[1], "bad malloc shape", "word or (array nt? (LO HI))")
            lo, hi = (_term(b) for b in rest[0].items)
            return CMalloc(region, True, nt, lo, hi)
        case "call":
            if len(args) < 2:
                _fail(node, "'call' needs a region and a callee")
            return CCall(_mode(args[0], _REGIONS), _cexpr(args[1]), tuple(_cexpr(a) for a in args[2:]))
        case "assert":
            _need(node, args, 2, head)
            return CAssert(_cond(args[0]), _cexpr(args[1]))
        case "assertnn":
            _need(node, args, 2, head)
            return CAssertNN(_term(args[0]), _cexpr(args[1]))
        case "verify":
            _need(node, args, 3, head)
            h, rest = _head(args[1], "(single TYPE) or (array ...)")
            if h == "single":
                _need(args[1], rest, 1, h)
                return CVerify(_term(args[0]), _type(rest[0], CIDENT), None, None, False, _cexpr(args[2]))
            nt = bool(rest) and isinstance(rest[0], _Atom) and rest[0].text == "nt"
            rest = rest[1:] if nt else rest
            if h != "array" or len(rest) != 2 or not isinstance(rest[0], _List) or len(rest[0].items) != 2:
                _fail(args[1], "bad verify shape", "(single TYPE) or (array nt? (LO HI) TYPE)")
            lo, hi = (_term(b) for b in rest[0].items)
            return CVerify(_term(args[0]), _type(rest[1], CIDENT), lo, hi, nt, _cexpr(args[2]))
        case "verifyfun":
            _need(node, args, 3, head)
            sig = _type(args[1], CIDENT)
            if not isinstance(sig, Fun):
                _fail(args[1], "verifyfun needs a function type", "(fun ...)")
            return CVerifyFun(_term(args[0]), sig, _cexpr(args[2]))
        case "widen":
            _need(node, args, 3, head)
            return CWiden(_cident(args[0]), _term(args[1]), _cexpr(args[2]))
        case "strlen":
            _need(node, args, 3, head)
            return CStrlen(_mode(args[0], _REGIONS), _cident(args[1]), _cident(args[2]))
        case "scope":
            _need(node, args, 2, head)
            return CScope(_mode(args[0], _REGIONS), _cexpr(args[1]))
    _fail(node, f"unknown CoreC form {head!r}")


def parse_cexpr(text: str) -> CExpr:
    forms = _read_sexprs(text)
    if len(forms) != 1:
        raise ParseError("expected exactly one expression", 1, 1)
    return _cexpr(forms[0])


def _field(node, name):
    head, args = _head(node, name)
    if head != name:
        _fail(node, f"expected ({name} ...)", name)
    return args


def parse_cprogram(text: str) -> CProgram:
    funs, cells, main = {}, {}, None
    for form in _read_sexprs(text):
        head, args = _head(form, "cfun|heap|main")
        if head == "cfun":
            if len(args) != 6:
                _fail(form, "cfun takes addr, region, mode, sig, params and body")
            addr = _int(_field(args[0], "addr")[0])
            region = _mode(_field(args[1], "region")[0], _REGIONS)
            mode = _mode(_field(args[2], "mode")[0])
            sig = _type(_field(args[3], "sig")[0], CIDENT)
            if not isinstance(sig, Fun):
                _fail(args[3], "sig must be a function type")
            params = tuple(_cident(x) for x in _field(args[4], "params"))
            body = _cexpr(_field(args[5], "body")[0])
            if addr <= 0 or (region, addr) in funs:
                _fail(form, f"bad or duplicate function address {addr}")
            funs[(region, addr)] = CFunDef(params, body, mode, sig)
        elif head == "heap":
            for block in args:
                region = _mode(block.items[0], _REGIONS) if isinstance(block, _List) and block.items else None
                if region is None:
                    _fail(block, "bad heap block", "(REGION (ADDR N)...)")
                for cell in block.items[1:]:
                    if not isinstance(cell, _List) or len(cell.items) != 2:
                        _fail(cell, "bad heap cell", "(ADDR N)")
                    addr = _int(cell.items[0])
                    if addr <= 0 or (region, addr) in cells:
                        _fail(cell, f"bad or duplicate heap address {addr}")
                    cells[(region, addr)] = _int(cell.items[1])
        elif head == "main":
            if main is not None or len(args) != 1:
                _fail(form, "exactly one main expression expected")
            main = _cexpr(args[0])
        else:
            _fail(form, f"unknown top-level form {head!r}", "cfun|heap|main")
    if main is None:
        raise ParseError("missing (main ...)", 1, 1, "(main EXPR)")
    marks = tuple(max((a for (r, a) in cells if r is region), default=0) + 1 for region in _REGIONS)
    return CProgram(CFunStore(funs), ErasedHeap(cells, marks), main)
