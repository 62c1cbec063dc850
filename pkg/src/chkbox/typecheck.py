"""Mode-indexed typing judgment Γ;Θ ⊢_m e : τ and literal validity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

from .lattice import (
    Eq, PredEnv, mode_le, subtype, type_eq, wf_bounds, wf_cast_target,
    wf_nested,
)
from .store import FunStore, Heap
from .syntax import (
    INT, Add, Array, Assign, Bound, Call, Cast, Checked, Deref, DynCast, Expr,
    Fun, FunDef, If, IntType, Let, Lit, Malloc, Mode, Program, Ptr, Ret, Strlen,
    Unchecked, Var, as_bound, free_vars, lit_bound, print_type,
    subst_type, type_free_vars,
)


class TypeCheckError(Exception):
    """The first violated premise: rule name, child-index path, message."""

    def __init__(self, rule: str, path: tuple[int, ...], message: str):
        self.rule, self.path, self.message = rule, path, message
        where = "/".join(map(str, path)) or "root"
        super().__init__(f"{rule} at {where}: {message}")


def is_checked(t) -> bool:
    return isinstance(t, Ptr) and t.mode is Mode.C


# ------------------------------------------------------------------ sizes


def size_of(w) -> int:
    match w:
        case IntType() | Ptr():
            return 1
        case Array(nt, lo, hi, elem):
            if lo.var is not None or hi.var is not None:
                raise ValueError("size of an array with variable bounds")
            return max(hi.offset - lo.offset, 0) * size_of(elem) + (1 if nt else 0)
        case Fun():
            raise ValueError("function types are unsized")
    raise ValueError(f"not an object type: {w!r}")


def resolve_bound(theta: PredEnv, b: Bound) -> Optional[int]:
    """Literal value of b when Θ pins every variable it mentions."""
    seen = set()
    while b.var is not None:
        p = theta.get(b.var)
        if not isinstance(p, Eq) or b.var in seen:
            return None
        seen.add(b.var)
        b = p.bound.shift(b.offset)
    return b.offset


def pointee_cells(theta: PredEnv, w) -> Optional[tuple[range, object]]:
    """Offsets a data pointer covers and the word type stored there."""
    match w:
        case IntType() | Ptr():
            return range(0, 1), w
        case Array(nt, lo, hi, elem):
            lo_v, hi_v = resolve_bound(theta, lo), resolve_bound(theta, hi)
            if lo_v is None or hi_v is None:
                return None
            return range(lo_v, hi_v + (1 if nt else 0)), elem
    return None


# ------------------------------------------------------------- constants


def const_valid(theta: PredEnv, heap: Heap, funs: FunStore, scope: frozenset,
                m: Mode, n: int, t) -> bool:
    """Θ;H;σ ⊢_m n : τ, the recursive literal validity judgment."""
    if isinstance(t, IntType):
        return True
    if not isinstance(t, Ptr):
        return False
    if n == 0:
        return True
    if m is Mode.C and t.mode is not Mode.C:
        return True  # tainted literals are verified when used; unchecked ones never are
    if (n, t) in scope:
        return True
    if not mode_le(t.mode, m):
        return False
    w = t.pointee
    if isinstance(w, Fun):
        fd = funs.get(m, n)
        return fd is not None and fd.mode is t.mode and type_eq(theta, fd.fun_type(), w)
    cells = pointee_cells(theta, w)
    if cells is None:
        return False
    offsets, elem = cells
    inner = scope | {(n, t)}
    for i in offsets:
        cell = heap.get(m, n + i)
        if cell is None or not const_valid(theta, heap, funs, inner, m, cell.n, elem):
            return False
    return True


# ---------------------------------------------------------------- checker


@dataclass
class TypeContext:
    heap: Heap
    funs: FunStore
    # value of x inside a machine-introduced ret frame, keyed by node identity
    ret_values: Optional[Mapping[int, Optional[Lit]]] = None


def _c(t) -> bool:
    return is_checked(t)


class Checker:
    def __init__(self, ctx: TypeContext):
        self.ctx = ctx

    def fail(self, rule: str, path, message: str):
        raise TypeCheckError(rule, tuple(path), message)

    def check(self, gamma: dict, theta: dict, m: Mode, e: Expr, path=()) -> object:
        match e:
            case Lit(n, t):
                return self.lit(gamma, theta, m, n, t, path)
            case Var(x):
                if x not in gamma:
                    self.fail("T-Var", path, f"unbound variable {x}")
                return gamma[x]
            case Add(a, b):
                for i, sub in enumerate((a, b)):
                    if self.check(gamma, theta, m, sub, (*path, i)) != INT:
                        self.fail("T-Add", (*path, i), "operand is not int")
                return INT
            case Cast(t, body):
                return self.cast(gamma, theta, m, t, body, path)
            case DynCast(t, body):
                return self.dyncast(gamma, theta, m, t, body, path)
            case Ret():
                return self.ret(gamma, theta, m, e, path)
            case Strlen(x):
                t = gamma.get(x)
                if not (isinstance(t, Ptr) and isinstance(t.pointee, Array) and t.pointee.nt):
                    self.fail("T-Strlen", path, f"{x} is not an NT-array pointer")
                if not mode_le(t.mode, m):
                    self.fail("T-Strlen", path, f"{t.mode.value} pointer used in {m.value} mode")
                return INT
            case Malloc(xi, w):
                if isinstance(w, Fun):
                    self.fail("T-Mac", path, "malloc of a function type")
                if not mode_le(xi, m):
                    self.fail("T-Mac", path, f"{xi.value} allocation in {m.value} mode")
                t = Ptr(w, xi)
                if not wf_bounds(gamma, w):
                    self.fail("T-Mac", path, "ill-formed bounds")
                if not wf_nested(m, t):
                    self.fail("T-Mac", path, "ill-formed nested pointer type")
                return t
            case Deref(Add(a, b)):
                elem, xi = self.indexed(gamma, theta, m, a, b, (*path, 0), "T-Ind")
                return elem
            case Deref(body):
                t = self.check(gamma, theta, m, body, (*path, 0))
                if not isinstance(t, Ptr) or isinstance(t.pointee, Fun):
                    self.fail("T-Def", path, "dereference of a non-data pointer")
                if not mode_le(t.mode, m):
                    self.fail("T-Def", path, f"{t.mode.value} pointer used in {m.value} mode")
                w = t.pointee
                return w.elem if isinstance(w, Array) else w
            case Assign(Add(a, b), v):
                elem, xi = self.indexed(gamma, theta, m, a, b, (*path, 0), "T-IndAssign")
                vt = self.check(gamma, theta, m, v, (*path, 1))
                if not subtype(theta, vt, elem):
                    self.fail("T-IndAssign", path, "assigned value is not a subtype")
                return elem
            case Assign(target, v):
                t = self.check(gamma, theta, m, target, (*path, 0))
                rule = "T-AssignArr" if isinstance(t, Ptr) and isinstance(t.pointee, Array) else "T-Assign"
                if not isinstance(t, Ptr) or isinstance(t.pointee, Fun):
                    self.fail(rule, path, "assignment through a non-data pointer")
                if not mode_le(t.mode, m):
                    self.fail(rule, path, f"{t.mode.value} pointer used in {m.value} mode")
                elem = t.pointee.elem if isinstance(t.pointee, Array) else t.pointee
                vt = self.check(gamma, theta, m, v, (*path, 1))
                if not subtype(theta, vt, elem):
                    self.fail(rule, path, "assigned value is not a subtype")
                return elem
            case Let(x, bound, body):
                t1 = self.check(gamma, theta, m, bound, (*path, 0))
                return self.let(gamma, theta, m, x, bound, t1, body, path)
            case If(c, a, b):
                self.check(gamma, theta, m, c, (*path, 0))
                ta = self.check(gamma, theta, m, a, (*path, 1))
                tb = self.check(gamma, theta, m, b, (*path, 2))
                if subtype(theta, ta, tb):
                    return tb
                if subtype(theta, tb, ta):
                    return ta
                self.fail("T-If", path, "branches have incompatible types")
            case Call(fn, args):
                return self.call(gamma, theta, m, fn, args, path)
            case Checked(xs, body) | Unchecked(xs, body):
                inner = Mode.C if isinstance(e, Checked) else Mode.U
                rule = "T-Checked" if inner is Mode.C else "T-Unchecked"
                # body first, so a misuse inside the block is reported at its source
                t = self.check(gamma, theta, inner, body, (*path, 0))
                for x in xs:
                    if x in gamma and _c(gamma[x]):
                        self.fail(rule, path, f"interface variable {x} has a checked type")
                extra = free_vars(body) - set(xs)
                if extra:
                    self.fail(rule, path, f"free variables {sorted(extra)} not declared")
                if _c(t):
                    self.fail(rule, path, "block result has a checked type")
                return t
        raise TypeCheckError("T-?", tuple(path), f"not an expression: {e!r}")

    # -- individual rules

    def lit(self, gamma, theta, m, n, t, path):
        if not wf_bounds(gamma, t) or not wf_cast_target(m, t):
            self.fail("T-ConstC" if m is Mode.C else "T-ConstU", path,
                      f"ill-formed literal type {print_type(t)}")
        if m is Mode.U:
            if _c(t):
                self.fail("T-ConstU", path, "checked literal in unchecked code")
            return t
        if not const_valid(theta, self.ctx.heap, self.ctx.funs, frozenset(), Mode.C, n, t):
            self.fail("T-ConstC", path, f"literal {n} is not valid at {print_type(t)}")
        return t

    def cast(self, gamma, theta, m, t, body, path):
        if not wf_bounds(gamma, t) or not wf_cast_target(m, t):
            self.fail("T-CastPtr", path, "ill-formed target type")
        src = self.check(gamma, theta, m, body, (*path, 0))
        if not subtype(theta, src, t):
            self.fail("T-CastPtr", path, f"{print_type(src)} is not a subtype of {print_type(t)}")
        return t

    def dyncast(self, gamma, theta, m, t, body, path):
        if not wf_bounds(gamma, t) or not wf_nested(m, t):
            self.fail("T-DynCast", path, "ill-formed target type")
        src = self.check(gamma, theta, m, body, (*path, 0))
        if not (isinstance(src, Ptr) and isinstance(t, Ptr) and src.mode is t.mode):
            self.fail("T-DynCast", path, "dynamic casts relate pointers of one mode")
        a, b = src.pointee, t.pointee
        if isinstance(a, Fun) or isinstance(b, Fun):
            self.fail("T-DynCast", path, "dynamic cast of a function pointer")
        ea = a.elem if isinstance(a, Array) else a
        eb = b.elem if isinstance(b, Array) else b
        if not type_eq(theta, ea, eb):
            self.fail("T-DynCast", path, "element types differ")
        if isinstance(b, Array) and b.nt and not (isinstance(a, Array) and a.nt):
            self.fail("T-DynCast", path, "cannot cast to a null-terminated array")
        return t

    def indexed(self, gamma, theta, m, a, b, path, rule):
        ta = self.check(gamma, theta, m, a, (*path, 0))
        if not (isinstance(ta, Ptr) and isinstance(ta.pointee, Array)):
            self.fail(rule, path, "pointer arithmetic on a non-array pointer")
        if self.check(gamma, theta, m, b, (*path, 1)) != INT:
            self.fail(rule, path, "array index is not int")
        if not mode_le(ta.mode, m):
            self.fail(rule, path, f"{ta.mode.value} pointer used in {m.value} mode")
        return ta.pointee.elem, ta.mode

    def bind(self, gamma, theta, x, t, pred, path, rule):
        for y, ty in gamma.items():
            if y != x and x in type_free_vars(ty):
                self.fail(rule, path, f"rebinding {x} would capture the type of {y}")
        for y, p in theta.items():
            if y != x and isinstance(p, Eq) and p.bound.var == x:
                self.fail(rule, path, f"rebinding {x} would capture a fact about {y}")
        g = dict(gamma)
        g[x] = t
        th = {y: p for y, p in theta.items() if y != x}
        if pred is not None:
            th[x] = pred
        return g, th

    def let(self, gamma, theta, m, x, bound, t1, body, path):
        if t1 == INT:
            b = as_bound(bound)
            pred = Eq(b) if b is not None and b.var != x else None
            g, th = self.bind(gamma, theta, x, INT, pred, path, "T-LetInt")
            t2 = self.check(g, th, m, body, (*path, 1))
            if x in type_free_vars(t2):
                if b is None or b.var == x:
                    self.fail("T-LetInt", path, f"result type depends on {x} bound to a non-bound")
                t2 = subst_type(t2, {x: b})
            return t2
        g, th = self.bind(gamma, theta, x, t1, None, path, "T-Let")
        t2 = self.check(g, th, m, body, (*path, 1))
        if x in type_free_vars(t2):
            self.fail("T-Let", path, f"result type mentions {x}")
        return t2

    def ret(self, gamma, theta, m, e: Ret, path):
        values = self.ctx.ret_values
        if values is not None and id(e) in values:
            inner = values[id(e)]
            t1 = self.lit(gamma, theta, m, inner.n, inner.ty, path)
            return self.let(gamma, theta, m, e.name, inner, t1, e.body, path)
        if e.saved is not None and e.saved.ty == INT:
            g, th = self.bind(gamma, theta, e.name, INT, Eq(lit_bound(e.saved.n)), path, "T-RetInt")
            return self.check(g, th, m, e.body, (*path, 0))
        if e.name not in gamma:
            self.fail("T-RetInt", path, f"ret of {e.name} without a binding")
        return self.check(gamma, theta, m, e.body, (*path, 0))

    def call(self, gamma, theta, m, fn, args, path):
        tf = self.check(gamma, theta, m, fn, (*path, 0))
        if not (isinstance(tf, Ptr) and isinstance(tf.pointee, Fun)):
            self.fail("T-Fun", path, "callee is not a function pointer")
        if not mode_le(tf.mode, m):
            self.fail("T-Fun", path, f"{tf.mode.value} function called in {m.value} mode")
        f = tf.pointee
        if len(args) != len(f.params):
            self.fail("T-Fun", path, f"expected {len(f.params)} arguments, got {len(args)}")
        arg_types = [self.check(gamma, theta, m, a, (*path, i + 1)) for i, a in enumerate(args)]
        bounds = []
        for i, (a, t) in enumerate(zip(args, arg_types)):
            if t == INT:
                b = as_bound(a)
                if b is None:
                    self.fail("T-Fun", (*path, i + 1), "integer argument is not a bound expression")
                bounds.append(b)
        sigma = dict(zip(f.binders, bounds))
        for i, (t, p) in enumerate(zip(arg_types, f.params)):
            want = subst_type(p, sigma)
            if not subtype(theta, t, want):
                self.fail("T-Fun", (*path, i + 1),
                          f"argument {print_type(t)} is not a subtype of {print_type(want)}")
        return subst_type(f.ret, sigma)


def typecheck(gamma: Mapping, theta: Mapping, m: Mode, e: Expr,
              store: Program | TypeContext | None = None):
    """Type of e, or TypeCheckError naming the first violated premise."""
    if isinstance(store, Program):
        ctx = TypeContext(Heap.from_program(store), FunStore.from_program(store))
    elif store is None:
        ctx = TypeContext(Heap(), FunStore())
    else:
        ctx = store
    return Checker(ctx).check(dict(gamma), dict(theta), m, e)


# ---------------------------------------------------------------- programs


def body_modes(fd: FunDef) -> tuple[Mode, ...]:
    """Context modes a function body may run in once inlined by a call."""
    return {Mode.C: (Mode.C,), Mode.T: (Mode.C, Mode.U), Mode.U: (Mode.U,)}[fd.mode]


def check_fundef(fd: FunDef, region: Mode, ctx: TypeContext, where: str = "") -> None:
    rule = "T-FunDef"
    names = [x for x, _ in fd.params]
    if len(set(names)) != len(names):
        raise TypeCheckError(rule, (), f"{where}duplicate parameter names")
    if (region is Mode.C) != (fd.mode is Mode.C):
        raise TypeCheckError(rule, (), f"{where}{fd.mode.value} function stored in region {region.value}")
    ftype = Ptr(fd.fun_type(), fd.mode)
    gamma = {x: INT for x in fd.int_params}
    for x, t in fd.params:
        if not wf_bounds(gamma, t):
            raise TypeCheckError(rule, (), f"{where}parameter {x} has ill-formed bounds")
    if not wf_bounds({}, ftype):
        raise TypeCheckError(rule, (), f"{where}ill-formed signature")
    gamma = dict(fd.params)
    for m in body_modes(fd):
        if not wf_nested(m, ftype):
            raise TypeCheckError(rule, (), f"{where}signature not well-formed in {m.value} mode")
        try:
            t = Checker(ctx).check(gamma, {}, m, fd.body)
        except TypeCheckError as err:
            raise TypeCheckError(err.rule, err.path, f"{where}{err.message}") from None
        if not subtype({}, t, fd.ret):
            raise TypeCheckError(rule, (), f"{where}body type {print_type(t)} does not fit {print_type(fd.ret)}")


def check_program(p: Program):
    """Check every function body and type main at mode c with empty Γ."""
    ctx = TypeContext(Heap.from_program(p), FunStore.from_program(p))
    for entry in p.funs:
        check_fundef(entry.fundef, entry.region, ctx, f"function {entry.region.value}:{entry.addr}: ")
    return Checker(ctx).check({}, {}, Mode.C, p.main)
