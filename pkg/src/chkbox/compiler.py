"""Type-directed compilation to CoreC.

The source is first put in A-normal form, so every memory operation works
on a variable or literal. Array pointers get a pair of shadow variables
``x#lo``/``x#hi`` holding their current bounds; checks read the shadows,
never the pointer, so no bounds are passed at calls. The callee rebuilds
them from its parameter types.

Rules reconstructed from prose and examples are marked ``reconstructed``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Mapping, Optional

from .corec import (
    And, CAdd, CAssert, CAssertNN, CAssign, CCall, CConfig, CDeref, CExpr,
    CFunDef, CFunStore, CIf, CLet, CLit, CMalloc, CProgram, CRet, CScope,
    CStrlen, CTerm, CVar, CVerify, CVerifyFun, CWiden, Le, Lt, TIf, TLit, TSub,
    TVar, Term, erase_heap, shadow_names, shadow_values, t_add,
)
from .lattice import Eq, mode_le, mode_meet, subtype
from .machine import Config, spine_bindings, spine_frames, stack_theta
from .store import Heap
from .syntax import (
    INT, Add, Array, Assign, Bound, Call, Cast, Checked, Deref, DynCast, Expr,
    FunDef, If, Let, Lit, Malloc, Mode, Program, Ptr, Ret, Strlen,
    Unchecked, Var, as_bound, subst_type, type_free_vars,
)
from .typecheck import TypeCheckError, check_program, typecheck


class CompileError(Exception):
    """Internal error: lowering reached a combination typing should reject."""


# ----------------------------------------------------------- A-normal form


def _is_atom(e: Expr) -> bool:
    return type(e) is Var or type(e) is Lit


class _Anf:
    def __init__(self, ret_map: Optional[dict] = None):
        self.counter = itertools.count()
        self.ret_map = ret_map

    def fresh(self) -> str:
        return f"tmp#{next(self.counter)}"

    def normalize(self, e: Expr) -> Expr:
        binds, core = self.split(e)
        for x, b in reversed(binds):
            core = Let(x, b, core)
        return core

    def atomize(self, e: Expr, binds: list) -> Expr:
        more, core = self.split(e)
        binds.extend(more)
        if _is_atom(core):
            return core
        t = self.fresh()
        binds.append((t, core))
        return Var(t)

    def split(self, e: Expr) -> tuple[list, Expr]:
        """Temporaries to bind before e, and e with atomic operands."""
        binds: list = []
        a = lambda sub: self.atomize(sub, binds)  # noqa: E731
        match e:
            case Lit() | Var() | Strlen() | Malloc():
                return binds, e
            case Add(l, r):
                return binds, Add(a(l), a(r))
            case Cast(t, body):
                # casts are erased, so their operand stays where it is
                more, core = self.split(body)
                return more, Cast(t, core)
            case DynCast(t, body):
                return binds, DynCast(t, a(body))
            case Deref(Add(p, i)):
                return binds, Deref(Add(a(p), a(i)))
            case Deref(body):
                return binds, Deref(a(body))
            case Assign(Add(p, i), v):
                # the stored value runs after the address arithmetic, so it
                # keeps its place instead of floating ahead of the null check
                p2, i2 = a(p), a(i)
                return binds, Assign(Add(p2, i2), v if _is_atom(v) else self.normalize(v))
            case Assign(t, v):
                # same shape as the indexed form, so both lower alike
                return binds, Assign(a(t), v if _is_atom(v) else self.normalize(v))
            case Let(x, bound, body):
                more, core = self.split(bound)
                return more, Let(x, core, self.normalize(body))
            case If(Deref(Var()) as c, then, else_):
                return binds, If(c, self.normalize(then), self.normalize(else_))
            case If(c, then, else_):
                return binds, If(a(c), self.normalize(then), self.normalize(else_))
            case Call(fn, args):
                f = a(fn)
                return binds, Call(f, tuple(a(x) for x in args))
            case Checked(vs, body):
                return binds, Checked(vs, self.normalize(body))
            case Unchecked(vs, body):
                return binds, Unchecked(vs, self.normalize(body))
            case Ret(x, saved, body):
                new = Ret(x, saved, self.normalize(body))
                if self.ret_map is not None:
                    self.ret_map[id(e)] = new
                return binds, new
        raise TypeError(f"not an expression: {e!r}")


def anf(e: Expr, ret_map: Optional[dict] = None) -> Expr:
    """A-normal form: operands of compound expressions become atoms."""
    return _Anf(ret_map).normalize(e)


# --------------------------------------------------------------- lowering


def bound_term(b: Bound) -> Term:
    return TLit(b.offset) if b.var is None else t_add(TVar(b.var), b.offset)


def type_bounds(t) -> Optional[tuple[Term, Term]]:
    if isinstance(t, Ptr) and isinstance(t.pointee, Array):
        return bound_term(t.pointee.lo), bound_term(t.pointee.hi)
    return None


def atom_term(e: Expr) -> Term:
    return TLit(e.n) if type(e) is Lit else TVar(e.name)


def lower_region(ptr: Mode, ctx: Mode) -> Mode:
    """Heap region a memory operation touches: c only when both modes are c."""
    return Mode.C if mode_meet(ptr, ctx) is Mode.C else Mode.U


def _subst_term(t: Term, sigma: Mapping[str, Term]) -> Term:
    match t:
        case TLit():
            return t
        case TVar(x):
            return sigma.get(x, t)
        case TIf(c, a, b):
            return TIf(_subst_term(c, sigma), _subst_term(a, sigma), _subst_term(b, sigma))
    return type(t)(_subst_term(t.left, sigma), _subst_term(t.right, sigma))


def _term_vars(t: Term) -> set:
    match t:
        case TLit():
            return set()
        case TVar(x):
            return {x}
        case TIf(c, a, b):
            return _term_vars(c) | _term_vars(a) | _term_vars(b)
    return _term_vars(t.left) | _term_vars(t.right)


@dataclass
class Compiled:
    code: CExpr
    type: object
    # current bounds of an array-pointer result, valid right after it is produced
    bounds: Optional[tuple[Term, Term]] = None


@dataclass
class RetInfo:
    """What a ret frame restores: the inner value and the outer shadows."""
    inner: Lit
    prev_lo: Optional[int] = None
    prev_hi: Optional[int] = None


@dataclass
class ShadowEnv:
    """ρ: array-pointer variables and their shadow bound names."""
    entries: dict = field(default_factory=dict)

    def bind(self, x: str, t) -> "ShadowEnv":
        entries = dict(self.entries)
        if isinstance(t, Ptr) and isinstance(t.pointee, Array):
            entries[x] = (*shadow_names(x), t.mode)
        else:
            entries.pop(x, None)
        return ShadowEnv(entries)


def _range_cond(lo: Term, hi: Term, shift: Optional[Term], inclusive: bool):
    """0 lies in the window of the shifted pointer: lo-i <= 0 < hi-i.

    For null-terminated reads the upper test is <=. Stating the test
    relative to the shifted pointer makes it fold to the same condition
    as the check on the pointer once the addition has run.
    """
    if shift is not None:
        lo, hi = TSub(lo, shift), TSub(hi, shift)
    zero = TLit(0)
    return And(Le(lo, zero), Le(zero, hi) if inclusive else Lt(zero, hi))


class Compiler:
    def __init__(self, ret_info: Optional[Mapping[int, RetInfo]] = None):
        self.ret_info = ret_info or {}
        self.counter = itertools.count()

    def fresh(self) -> str:
        return f"chk#{next(self.counter)}"

    # -- helpers

    def atom(self, gamma, e: Expr) -> Compiled:
        if type(e) is Lit:
            return Compiled(CLit(e.n), e.ty, type_bounds(e.ty))
        t = gamma[e.name]
        bounds = None
        if isinstance(t, Ptr) and isinstance(t.pointee, Array):
            lo, hi = shadow_names(e.name)
            bounds = TVar(lo), TVar(hi)
        return Compiled(CVar(e.name), t, bounds)

    def region(self, xi: Mode, m: Mode, what: str) -> Mode:
        if not mode_le(xi, m):
            raise CompileError(f"{what} through a {xi.value} pointer in {m.value} mode")
        return lower_region(xi, m)

    def guard(self, ptr: Compiled, addr: Term, op: CExpr, shift: Optional[Term],
              inclusive: bool, check_range: bool = True) -> CExpr:
        """Range assert, then null check, then tainted verification, then op.

        ``shift`` is the index already added to ``addr``; the range test and
        the verified window are taken relative to the shifted pointer.
        """
        t = ptr.type
        w = t.pointee
        code = op
        if t.mode is Mode.T:
            if isinstance(w, Array):
                lo, hi = ptr.bounds
                if shift is not None:
                    lo, hi = TSub(lo, shift), TSub(hi, shift)
                code = CVerify(addr, w.elem, lo, hi, w.nt, code)
            else:
                code = CVerify(addr, w, None, None, False, code)
        code = CAssertNN(addr, code)
        if isinstance(w, Array) and check_range:
            lo, hi = ptr.bounds
            code = CAssert(_range_cond(lo, hi, shift, inclusive), code)
        return code

    # -- the judgment

    def compile(self, gamma: dict, theta: dict, rho: ShadowEnv, m: Mode, e: Expr) -> Compiled:
        match e:
            case Lit() | Var():
                return self.atom(gamma, e)

            case Add(a, b):
                ca, cb = self.atom(gamma, a), self.atom(gamma, b)
                return Compiled(CAdd(ca.code, cb.code), INT)

            case Cast(t, body):
                c = self.compile(gamma, theta, rho, m, body)
                return Compiled(c.code, t, type_bounds(t))

            case DynCast(t, body):
                # reconstructed: containment of the target window in the source one
                c = self.atom(gamma, body)
                code = c.code
                src = c.type
                if isinstance(t, Ptr) and isinstance(src, Ptr) and (
                        isinstance(t.pointee, Array) or isinstance(src.pointee, Array)):
                    lo_t, hi_t = type_bounds(t) or (TLit(0), TLit(1))
                    lo_s, hi_s = c.bounds or (TLit(0), TLit(1))
                    cond = And(Le(lo_s, lo_t), Le(hi_t, hi_s))
                    code = CIf(c.code, CAssert(cond, c.code), c.code)
                return Compiled(code, t, type_bounds(t))

            case Strlen(x):
                # reconstructed: scan, then raise the upper shadow to the length
                ptr = self.atom(gamma, Var(x))
                region = self.region(ptr.type.mode, m, "strlen")
                lo_name, hi_name = shadow_names(x)
                op = CStrlen(region, x, hi_name)
                return Compiled(self.guard(ptr, TVar(x), op, None, True), INT)

            case Malloc(xi, w):
                region = self.region(xi, m, "malloc")
                if isinstance(w, Array):
                    lo, hi = bound_term(w.lo), bound_term(w.hi)
                    cond = And(And(Le(lo, TLit(0)), Le(TLit(0), lo)), Lt(TLit(0), hi))
                    code = CAssert(cond, CMalloc(region, True, w.nt, lo, hi))
                else:
                    code = CMalloc(region, False, False, TLit(0), TLit(1))
                t = Ptr(w, xi)
                return Compiled(code, t, type_bounds(t))

            case Deref(Add(p, i)):
                ptr, idx = self.atom(gamma, p), self.atom(gamma, i)
                w = ptr.type.pointee
                region = self.region(ptr.type.mode, m, "dereference")
                tmp = self.fresh()
                op = CDeref(region, CVar(tmp))
                inner = self.guard(ptr, TVar(tmp), op, atom_term(i), w.nt)
                code = CAssertNN(atom_term(p), CLet(tmp, CAdd(ptr.code, idx.code), inner))
                return Compiled(code, w.elem, type_bounds(w.elem))

            case Deref(p):
                ptr = self.atom(gamma, p)
                w = ptr.type.pointee
                region = self.region(ptr.type.mode, m, "dereference")
                elem = w.elem if isinstance(w, Array) else w
                nt = isinstance(w, Array) and w.nt
                code = self.guard(ptr, atom_term(p), CDeref(region, ptr.code), None, nt)
                return Compiled(code, elem, type_bounds(elem))

            case Assign(Add(p, i), v):
                ptr, idx = self.atom(gamma, p), self.atom(gamma, i)
                w = ptr.type.pointee
                region = self.region(ptr.type.mode, m, "assignment")
                tmp = self.fresh()
                if _is_atom(v):
                    val = self.atom(gamma, v).code
                    op = CAssign(region, CVar(tmp), val)
                    inner = self.guard(ptr, TVar(tmp), op, atom_term(i), False)
                else:
                    cv = self.compile(gamma, theta, rho, m, v)
                    vtmp = self.fresh()
                    op = CAssign(region, CVar(tmp), CVar(vtmp))
                    inner = CLet(vtmp, cv.code, self.guard(ptr, TVar(tmp), op, atom_term(i), False))
                code = CAssertNN(atom_term(p), CLet(tmp, CAdd(ptr.code, idx.code), inner))
                return Compiled(code, w.elem, type_bounds(w.elem))

            case Assign(p, v):
                ptr = self.atom(gamma, p)
                w = ptr.type.pointee
                region = self.region(ptr.type.mode, m, "assignment")
                elem = w.elem if isinstance(w, Array) else w
                if _is_atom(v):
                    op = CAssign(region, ptr.code, self.atom(gamma, v).code)
                    code = self.guard(ptr, atom_term(p), op, None, False)
                else:
                    cv = self.compile(gamma, theta, rho, m, v)
                    vtmp = self.fresh()
                    op = CAssign(region, ptr.code, CVar(vtmp))
                    code = CLet(vtmp, cv.code, self.guard(ptr, atom_term(p), op, None, False))
                return Compiled(code, elem, type_bounds(elem))

            case Let(x, bound, body):
                c1 = self.compile(gamma, theta, rho, m, bound)
                return self.let(gamma, theta, rho, m, x, c1, as_bound(bound), body, CLet, None)

            case Ret(x, saved, body):
                info = self.ret_info.get(id(e))
                if info is None:
                    raise CompileError(f"ret frame for {x} without a recorded inner value")
                inner = info.inner
                c1 = Compiled(CLit(inner.n), inner.ty, type_bounds(inner.ty))
                b = as_bound(inner) if inner.ty == INT else None
                restore = (None if saved is None else saved.n, info)
                return self.let(gamma, theta, rho, m, x, c1, b, body, CRet, restore)

            case If(Deref(Var(x)) as c, then, else_) if self._widens(gamma, m, x):
                # reconstructed: a non-null cell at the upper bound widens it by one
                ptr = self.atom(gamma, Var(x))
                tmp = self.fresh()
                _, hi_name = shadow_names(x)
                ca = self.compile(gamma, theta, rho, m, then)
                cb = self.compile(gamma, theta, rho, m, else_)
                branch = CIf(CVar(tmp), CWiden(hi_name, TLit(1), ca.code), cb.code)
                read = CLet(tmp, CDeref(Mode.C, CVar(x)), branch)
                code = self.guard(ptr, TVar(x), read, None, True)
                t = self.join(theta, ca.type, cb.type)
                bounds = ca.bounds if ca.bounds == cb.bounds else type_bounds(t)
                return Compiled(code, t, bounds)

            case If(c, then, else_):
                cc = self.compile(gamma, theta, rho, m, c)
                ca = self.compile(gamma, theta, rho, m, then)
                cb = self.compile(gamma, theta, rho, m, else_)
                t = self.join(theta, ca.type, cb.type)
                bounds = None
                if ca.bounds is not None and cb.bounds is not None:
                    if ca.bounds == cb.bounds:
                        bounds = ca.bounds
                    elif _is_atom(c):
                        g = atom_term(c)
                        bounds = (TIf(g, ca.bounds[0], cb.bounds[0]), TIf(g, ca.bounds[1], cb.bounds[1]))
                    else:
                        bounds = type_bounds(t)
                return Compiled(CIf(cc.code, ca.code, cb.code), t, bounds)

            case Call(fn, args):
                cf = self.atom(gamma, fn)
                cargs = [self.atom(gamma, a) for a in args]
                ft = cf.type
                f = ft.pointee
                region = self.region(ft.mode, m, "call")
                code: CExpr = CCall(region, cf.code, tuple(a.code for a in cargs))
                if ft.mode is Mode.T:
                    code = CVerifyFun(atom_term(fn), f, code)
                code = CAssertNN(atom_term(fn), code)
                ints = [as_bound(a) for a, ca in zip(args, cargs) if ca.type == INT]
                ret = subst_type(f.ret, dict(zip(f.binders, ints)))
                return Compiled(code, ret, type_bounds(ret))

            case Checked(_, body) | Unchecked(_, body):
                inner = Mode.C if type(e) is Checked else Mode.U
                c = self.compile(gamma, theta, rho, inner, body)
                return Compiled(CScope(inner, c.code), c.type, c.bounds)

        raise TypeError(f"not an expression: {e!r}")

    def _widens(self, gamma, m, x) -> bool:
        t = gamma.get(x)
        return (m is Mode.C and isinstance(t, Ptr) and t.mode is Mode.C
                and isinstance(t.pointee, Array) and t.pointee.nt)

    def join(self, theta, ta, tb):
        if subtype(theta, ta, tb):
            return tb
        if subtype(theta, tb, ta):
            return ta
        raise CompileError("if branches have incompatible types")

    def let(self, gamma, theta, rho, m, x, c1: Compiled, b: Optional[Bound], body,
            node, restore):
        """Shared lowering of let and of a ret frame already holding its value."""
        g = dict(gamma)
        g[x] = c1.type
        th = {y: p for y, p in theta.items() if y != x}
        if c1.type == INT and b is not None and b.var != x:
            th[x] = Eq(b)
        rho2 = rho.bind(x, c1.type)
        cb = self.compile(g, th, rho2, m, body)
        lo_name, hi_name = shadow_names(x)
        code = cb.code
        if c1.bounds is not None:
            if node is CLet:
                code = CLet(lo_name, CTerm(c1.bounds[0]), CLet(hi_name, CTerm(c1.bounds[1]), code))
            else:
                info = restore[1]
                code = CRet(lo_name, info.prev_lo, CRet(hi_name, info.prev_hi, code))
        if node is CLet:
            code = CLet(x, c1.code, code)
        else:
            code = CRet(x, restore[0], code)

        t2 = cb.type
        if x in type_free_vars(t2):
            if c1.type != INT or b is None or b.var == x:
                raise CompileError(f"result type depends on {x}")
            t2 = subst_type(t2, {x: b})

        bounds = cb.bounds
        if bounds is not None:
            sigma = {}
            if c1.type == INT and b is not None and b.var != x:
                sigma[x] = bound_term(b)
            if c1.bounds is not None:
                sigma[lo_name], sigma[hi_name] = c1.bounds
            bounds = tuple(_subst_term(t, sigma) for t in bounds)
            hidden = {x, lo_name, hi_name}
            if any(_term_vars(t) & hidden for t in bounds):
                bounds = type_bounds(t2)
        return Compiled(code, t2, bounds)


# --------------------------------------------------------------- entry points


def compile_expr(gamma: Mapping, theta: Mapping, m: Mode, e: Expr,
                 ret_info: Optional[Mapping[int, RetInfo]] = None) -> Compiled:
    """Lower an already well-typed expression (ANF is applied here)."""
    ret_map: dict = {}
    normal = anf(e, ret_map)
    info = {}
    for old, new in ret_map.items():
        if ret_info and old in ret_info:
            info[id(new)] = ret_info[old]
    rho = ShadowEnv()
    for x, t in gamma.items():
        rho = rho.bind(x, t)
    return Compiler(info).compile(dict(gamma), dict(theta), rho, m, normal)


def compile_checked(gamma: Mapping, theta: Mapping, m: Mode, e: Expr, store=None) -> Compiled:
    """Typecheck, then lower; type errors propagate unchanged."""
    typecheck(gamma, theta, m, e, store)
    return compile_expr(gamma, theta, m, e)


def compile_fundef(fd: FunDef) -> CFunDef:
    gamma = dict(fd.params)
    m = Mode.U if fd.mode is Mode.U else Mode.C
    c = compile_expr(gamma, {}, m, fd.body)
    code = c.code
    for x, t in reversed(fd.params):
        bounds = type_bounds(t)
        if bounds is not None:
            lo, hi = shadow_names(x)
            code = CLet(lo, CTerm(bounds[0]), CLet(hi, CTerm(bounds[1]), code))
    return CFunDef(tuple(x for x, _ in fd.params), code, fd.mode, fd.fun_type())


def compile_funs(p: Program) -> CFunStore:
    return CFunStore({(f.region, f.addr): compile_fundef(f.fundef) for f in p.funs})


def compile_program(p: Program) -> CProgram:
    check_program(p)
    main = compile_expr({}, {}, Mode.C, p.main).code
    return CProgram(compile_funs(p), erase_heap(Heap.from_program(p)), main)


def compile_config(cfg: Config) -> CConfig:
    """(φ, H, e) ≫ (φ̇, Ḣ, ė): erase the state and lower the expression.

    Ret frames on the evaluation spine decide which binding each position
    sees; the erased stack replays them outermost first so shadows of outer
    bindings survive where an inner binding is not an array pointer.
    """
    values, env0 = spine_bindings(cfg.expr, cfg.stack)
    frames = spine_frames(cfg.expr)
    env: dict = {}
    for x, v in env0.items():
        env[x] = v.n
        env.update(shadow_values(x, v.ty))
    info = {}
    for frame in frames:  # outermost first
        inner = values[id(frame)]
        lo, hi = shadow_names(frame.name)
        info[id(frame)] = RetInfo(inner, env.get(lo), env.get(hi))
        env[frame.name] = inner.n
        env.update(shadow_values(frame.name, inner.ty))
    gamma = {x: v.ty for x, v in env0.items()}
    code = compile_expr(gamma, stack_theta(env0), Mode.C, cfg.expr, info).code
    return CConfig(env, erase_heap(cfg.heap), code)




# --------------------------------------------------------------- flagtable


def flagtable() -> dict:
    """Region of a lowered dereference for every (context, pointer) mode pair.

    Rows c and u go through the typechecker and compiler, so forbidden
    pairs come back as None. Row t has no typing context of its own; it
    lowers by the mode meet alone.
    """
    table = {}
    for ctx in (Mode.C, Mode.T, Mode.U):
        for ptr in (Mode.C, Mode.T, Mode.U):
            if ctx is Mode.T:
                table[(ctx, ptr)] = lower_region(ptr, ctx)
                continue
            gamma = {"x": Ptr(INT, ptr)}
            try:
                c = compile_checked(gamma, {}, ctx, Deref(Var("x")))
            except TypeCheckError:
                table[(ctx, ptr)] = None
                continue
            table[(ctx, ptr)] = _deref_region(c.code)
    return table


def _deref_region(code) -> Mode:
    while not isinstance(code, CDeref):
        code = code.body
    return code.region
