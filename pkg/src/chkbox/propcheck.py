"""Random well-typed programs and the metatheory oracles run over them."""

from __future__ import annotations

import itertools
import random
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Optional

from .compiler import CompileError, compile_config, compile_funs
from .corec import CConfig, CFailure, CFunStore, CStuck, c_step, erase_heap, join_key
from .lattice import Eq, type_eq, subtype, wf_nested
from .machine import (Config, FaultPolicy, Failure, NO_FAULTS, Stuck, config_type,
                      initial_config, step, trace_records)
from .store import FunStore, Heap, region_of
from .syntax import (INT, Add, Array, Assign, Call, Cast, Checked, Deref, DynCast,
                     Expr, Fun, FunDef, FunEntry, HeapEntry, If, Let, Lit, Malloc,
                     Mode, Program, Ptr, Ret, Strlen, Unchecked, Var, as_bound, free_vars,
                     lit_bound, print_program, subst_type, type_free_vars, var_bound)
from .typecheck import TypeCheckError, TypeContext, check_fundef, check_program, const_valid, is_checked

PROPERTIES = ("progress", "preservation", "uncheckedpres", "nonexposure", "noncrash", "simulation")
CHECKED_SUITE = ("progress", "preservation", "simulation")
UNCHECKED_SUITE = ("uncheckedpres", "nonexposure", "noncrash")

FORMS = ("Lit", "Var", "Add", "Cast", "DynCast", "Strlen", "Malloc", "Deref", "Index",
         "Assign", "IndexAssign", "Let", "If", "IfNT", "Call", "Unchecked", "Checked")


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    max_depth: int = 8
    count: int = 100
    arrays: bool = True
    nt_arrays: bool = True
    fun_ptrs: bool = True
    tainted_ptrs: bool = True
    unchecked: bool = False
    crash_rates: tuple[float, ...] = (0.25, 1.0)
    fault_seed: int = 0
    max_retries: int = 20


class GenerationError(Exception):
    pass


# ----------------------------------------------------------- generation


@dataclass(frozen=True)
class _Scope:
    gamma: dict
    theta: dict

    def bind(self, x: str, t, bound_expr: Optional[Expr] = None) -> "_Scope":
        gamma = dict(self.gamma)
        gamma[x] = t
        theta = dict(self.theta)
        b = as_bound(bound_expr) if t == INT and bound_expr is not None else None
        if b is not None and b.var != x:
            theta[x] = Eq(b)
        return _Scope(gamma, theta)

    def restrict(self, keep: Callable[[object], bool]) -> "_Scope":
        return _Scope({x: t for x, t in self.gamma.items() if keep(t)}, self.theta)


@dataclass(frozen=True)
class _Ctx:
    allowed: frozenset      # pointer modes the code may mention
    blocks: bool            # whether checked/unchecked blocks may appear
    funs: tuple             # FunEntry values the code may call


def _usable(t, m: Mode) -> bool:
    return wf_nested(m, t) and (m is Mode.C or not is_checked(t))


def _data_ptr(t) -> bool:
    return isinstance(t, Ptr) and not isinstance(t.pointee, Fun)


def _array_ptr(t) -> bool:
    return isinstance(t, Ptr) and isinstance(t.pointee, Array)


def _closed_bounds(w) -> bool:
    return isinstance(w, Array) and w.lo.var is None and w.hi.var is None


class _Generator:
    """Builds one program by inverting typing rules from a goal type."""

    def __init__(self, cfg: GenConfig, rng: random.Random):
        self.cfg, self.rng = cfg, rng
        self.names = itertools.count()
        self.cells: dict = {}
        self.objects: list = []
        self.entries: list = []
        self.heap = Heap()
        self.store = FunStore()
        self.block_weight = 6 if cfg.unchecked else 0

    def name(self) -> str:
        return f"v{next(self.names)}"

    # -- stores

    def build_heap(self) -> None:
        for region in (Mode.C, Mode.U):
            addr = 1
            for _ in range(self.rng.randint(1, 3)):
                length = self.rng.randint(1, 4)
                for i in range(length):
                    self.cells[(region, addr + i)] = Lit(self.rng.choice((0, 1, 2, 3, 5, -1)), INT)
                self.cells[(region, addr + length)] = Lit(0, INT)
                self.objects.append((region, addr))
                addr += length + 1
        self.heap = Heap.from_program(Program(heap=self.heap_entries()))

    def heap_entries(self) -> tuple:
        return tuple(HeapEntry(r, a, v) for (r, a), v in
                     sorted(self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1])))

    def ptr_modes(self, m: Mode, ctx: _Ctx) -> list:
        modes = [Mode.C, Mode.T] if m is Mode.C else [Mode.T, Mode.U]
        if not self.cfg.tainted_ptrs:
            modes = [x for x in modes if x is not Mode.T]
        return [x for x in modes if x in ctx.allowed]

    def callable_funs(self, m: Mode, ctx: _Ctx) -> list:
        return [f for f in ctx.funs
                if f.fundef.mode in ctx.allowed and wf_nested(m, Ptr(f.fundef.fun_type(), f.fundef.mode))]

    def data_goal(self, m: Mode, ctx: _Ctx) -> Optional[Ptr]:
        modes = self.ptr_modes(m, ctx)
        if not modes:
            return None
        xi = self.rng.choice(modes)
        if self.cfg.arrays and self.rng.random() < 0.7:
            nt = self.cfg.nt_arrays and self.rng.random() < 0.5
            return Ptr(Array(nt, lit_bound(0), lit_bound(self.rng.randint(1, 3)), INT), xi)
        return Ptr(INT, xi)

    def array_goal(self, m: Mode, ctx: _Ctx) -> Optional[Ptr]:
        if not self.cfg.arrays:
            return None
        g = self.data_goal(m, ctx)
        if g is None:
            return None
        if isinstance(g.pointee, Array):
            return g
        nt = self.cfg.nt_arrays and self.rng.random() < 0.5
        return Ptr(Array(nt, lit_bound(0), lit_bound(self.rng.randint(1, 3)), INT), g.mode)

    def pick_goal(self, m: Mode, ctx: _Ctx, arrays_first: bool = False):
        r = self.rng.random()
        if r < 0.3:
            return INT
        funs = self.callable_funs(m, ctx)
        if r < 0.4 and funs:
            fd = self.rng.choice(funs).fundef
            return Ptr(fd.fun_type(), fd.mode)
        if arrays_first:
            return self.array_goal(m, ctx) or self.data_goal(m, ctx) or INT
        return self.data_goal(m, ctx) or INT

    def heap_literal(self, goal: Ptr) -> Optional[Lit]:
        if isinstance(goal.pointee, Fun):
            region = region_of(goal.mode)
            addrs = [e.addr for e in self.entries if e.region is region
                     and e.fundef.mode is goal.mode and type_eq({}, e.fundef.fun_type(), goal.pointee)]
        else:
            region = region_of(goal.mode)
            addrs = [a for r, a in self.objects if r is region
                     and const_valid({}, self.heap, self.store, frozenset(), region, a, goal)]
        return Lit(self.rng.choice(addrs), goal) if addrs else None

    # -- expressions

    def expr(self, sc: _Scope, m: Mode, goal, depth: int, ctx: _Ctx) -> Expr:
        if depth <= 1 or self.rng.random() < 0.05:
            return self.leaf(sc, m, goal)
        productions = self.int_productions() if goal == INT else self.ptr_productions(goal)
        productions = [(w, make) for w, make in productions if w > 0]
        weights = [w for w, _ in productions]
        order = []
        pool = list(range(len(productions)))
        while pool:
            i = self.rng.choices(pool, [weights[j] for j in pool])[0]
            pool.remove(i)
            order.append(productions[i][1])
        for make in order:
            e = make(sc, m, goal, depth - 1, ctx)
            if e is not None:
                return e
        return self.leaf(sc, m, goal)

    def vars_of(self, sc: _Scope, m: Mode, pred) -> list:
        return sorted(x for x, t in sc.gamma.items() if _usable(t, m) and pred(t))

    def leaf(self, sc: _Scope, m: Mode, goal) -> Expr:
        if goal == INT:
            xs = self.vars_of(sc, m, lambda t: t == INT)
            if xs and self.rng.random() < 0.5:
                return Var(self.rng.choice(xs))
            return Lit(self.rng.choice((0, 1, 1, 2, 3, 4, -1)), INT)
        options = []
        xs = self.vars_of(sc, m, lambda t: type_eq(sc.theta, t, goal))
        if xs:
            options.append(lambda: Var(self.rng.choice(xs)))
        lit = self.heap_literal(goal)
        if lit is not None:
            options.append(lambda: lit)
        if _data_ptr(goal) and self.malloc_ok(goal, m):
            options.append(lambda: Malloc(goal.mode, goal.pointee))
        if not options or self.rng.random() < 0.1:
            return Lit(0, goal)
        return self.rng.choice(options)()

    def malloc_ok(self, goal: Ptr, m: Mode) -> bool:
        w = goal.pointee
        return (mode_usable(goal.mode, m)
                and (not isinstance(w, Array) or (w.lo.var is None and w.lo.offset == 0)))

    # -- int-typed productions

    def int_productions(self):
        return [(1, self.p_leaf), (2, self.p_add), (6, self.p_let), (2, self.p_if),
                (4, self.p_deref), (3, self.p_index), (3, self.p_assign), (2, self.p_index_assign),
                (3, self.p_call), (2, self.p_strlen), (2, self.p_ifnt), (self.block_weight, self.p_block),
                (1, self.p_cast), (1, self.p_handoff)]

    def p_leaf(self, sc, m, goal, d, ctx):
        return self.leaf(sc, m, goal)

    def p_add(self, sc, m, goal, d, ctx):
        return Add(self.expr(sc, m, INT, d, ctx), self.expr(sc, m, INT, d, ctx))

    def p_let(self, sc, m, goal, d, ctx):
        t = self.pick_goal(m, ctx, arrays_first=True)
        bound = self.expr(sc, m, t, d, ctx)
        x = self.name()
        return Let(x, bound, self.expr(sc.bind(x, t, bound), m, goal, d, ctx))

    def p_handoff(self, sc, m, goal, d, ctx):
        """Strip taint with a t-to-u cast in checked code, then use the result unchecked."""
        if m is not Mode.C or Mode.T not in self.ptr_modes(m, ctx):
            return None
        g = self.data_goal(m, ctx)
        if g is None:
            return None
        x = self.name()
        bound = Cast(Ptr(g.pointee, Mode.U), self.expr(sc, m, Ptr(g.pointee, Mode.T), d, ctx))
        inner = sc.bind(x, bound.ty)
        body = self.p_block(inner, m, INT, d, ctx) or self.expr(inner, m, INT, d, ctx)
        return Let(x, bound, body)

    def p_if(self, sc, m, goal, d, ctx):
        return If(self.expr(sc, m, INT, d, ctx), self.expr(sc, m, goal, d, ctx),
                  self.expr(sc, m, goal, d, ctx))

    def p_cast(self, sc, m, goal, d, ctx):
        if goal == INT:
            return Cast(INT, self.expr(sc, m, INT, d, ctx))
        return Cast(goal, self.expr(sc, m, goal, d, ctx))

    def pointer(self, sc, m, d, ctx, pred) -> Optional[Expr]:
        """A data pointer satisfying pred: an in-scope variable or a fresh expression."""
        xs = self.vars_of(sc, m, lambda t: _data_ptr(t) and pred(t))
        if xs and self.rng.random() < 0.5:
            return Var(self.rng.choice(xs))
        for _ in range(3):
            g = self.array_goal(m, ctx) if pred is _array_ptr else self.data_goal(m, ctx)
            if g is not None and pred(g):
                return self.expr(sc, m, g, d, ctx)
        return Var(self.rng.choice(xs)) if xs else None

    def index(self, sc, m, d, ctx) -> Optional[Add]:
        arr = self.pointer(sc, m, d, ctx, _array_ptr)
        if arr is None:
            return None
        r = self.rng.random()
        if r < 0.75:
            i = Lit(self.rng.choice((0, 0, 1, 2)), INT)
        elif r < 0.85:
            i = Lit(self.rng.choice((-1, 3, 4)), INT)
        else:
            i = self.expr(sc, m, INT, d, ctx)
        return Add(arr, i)

    def p_deref(self, sc, m, goal, d, ctx):
        p = self.pointer(sc, m, d, ctx, lambda t: True)
        return None if p is None else Deref(p)

    def p_index(self, sc, m, goal, d, ctx):
        a = self.index(sc, m, d, ctx)
        return None if a is None else Deref(a)

    def p_assign(self, sc, m, goal, d, ctx):
        p = self.pointer(sc, m, d, ctx, lambda t: True)
        return None if p is None else Assign(p, self.expr(sc, m, INT, d, ctx))

    def p_index_assign(self, sc, m, goal, d, ctx):
        a = self.index(sc, m, d, ctx)
        return None if a is None else Assign(a, self.expr(sc, m, INT, d, ctx))

    def p_strlen(self, sc, m, goal, d, ctx):
        xs = self.vars_of(sc, m, lambda t: _array_ptr(t) and t.pointee.nt)
        return Strlen(self.rng.choice(xs)) if xs else None

    def p_ifnt(self, sc, m, goal, d, ctx):
        xs = self.vars_of(sc, m, lambda t: _array_ptr(t) and t.pointee.nt)
        if not xs:
            return None
        return If(Deref(Var(self.rng.choice(xs))), self.expr(sc, m, goal, d, ctx),
                  self.expr(sc, m, goal, d, ctx))

    def p_block(self, sc, m, goal, d, ctx):
        if not (ctx.blocks and self.cfg.unchecked) or is_checked(goal):
            return None
        inner = Mode.U if m is Mode.C else Mode.C
        sub = sc.restrict(lambda t: not is_checked(t) and _usable(t, inner))
        body = self.expr(sub, inner, goal, d, ctx)
        xs = tuple(sorted(free_vars(body)))
        return Unchecked(xs, body) if inner is Mode.U else Checked(xs, body)

    def p_call(self, sc, m, goal, d, ctx):
        funs = self.callable_funs(m, ctx)
        rng = self.rng
        fitting = []
        for f in funs:
            ret = f.fundef.ret
            if goal == INT and ret == INT:
                fitting.append(f)
            elif goal != INT and (ret == INT) is False and not type_free_vars(ret) and type_eq(sc.theta, ret, goal):
                fitting.append(f)
            elif goal != INT and type_free_vars(ret) and _data_ptr(goal) and _closed_bounds(goal.pointee):
                fitting.append(f)
        rng.shuffle(fitting)
        for f in fitting:
            e = self.call(sc, m, goal, d, ctx, f)
            if e is not None:
                return e
        return None

    def call(self, sc, m, goal, d, ctx, f: FunEntry) -> Optional[Expr]:
        fd = f.fundef
        ftype = Ptr(fd.fun_type(), fd.mode)
        sigma = {}
        in_bounds = set().union(*(type_free_vars(t) for _, t in fd.params)) | type_free_vars(fd.ret)
        for x in fd.int_params:
            if x in in_bounds:
                sigma[x] = lit_bound(self.rng.randint(1, 3))
        ret = subst_type(fd.ret, sigma)
        if goal != INT and not type_eq(sc.theta, ret, goal):
            # pick the binder value that makes the return type match the goal
            if not (_array_ptr(ret) and _array_ptr(goal)):
                return None
            hv, gv = fd.ret.pointee.hi, goal.pointee.hi
            if hv.var is None or gv.var is not None or gv.offset - hv.offset < 1:
                return None
            sigma[hv.var] = lit_bound(gv.offset - hv.offset)
            ret = subst_type(fd.ret, sigma)
            if not type_eq(sc.theta, ret, goal):
                return None
        args = []
        for x, t in fd.params:
            if t == INT:
                if x in sigma:
                    args.append(Lit(sigma[x].offset, INT))
                else:
                    ys = self.vars_of(sc, m, lambda u: u == INT)
                    args.append(Var(self.rng.choice(ys)) if ys and self.rng.random() < 0.4
                                else Lit(self.rng.randint(-1, 4), INT))
            else:
                args.append(self.expr(sc, m, subst_type(t, sigma), d, ctx))
        r = self.rng.random()
        xs = self.vars_of(sc, m, lambda u: type_eq(sc.theta, u, ftype))
        if xs and r < 0.3:
            fn = Var(self.rng.choice(xs))
        elif r < 0.85 or not self.cfg.fun_ptrs:
            fn = Lit(f.addr, ftype)
        else:
            fn = self.expr(sc, m, ftype, d, ctx)
        return Call(fn, tuple(args))

    # -- pointer-typed productions

    def ptr_productions(self, goal):
        base = [(2, self.p_leaf), (2, self.p_let), (2, self.p_if), (2, self.p_cast)]
        if isinstance(goal.pointee, Fun):
            return base
        return base + [(2, self.p_malloc), (2, self.p_subcast), (2, self.p_dyncast),
                       (2, self.p_call), (self.block_weight, self.p_block)]

    def p_malloc(self, sc, m, goal, d, ctx):
        if not self.malloc_ok(goal, m):
            return None
        w = goal.pointee
        if _closed_bounds(w):
            k = w.hi.offset
            xs = self.vars_of(sc, m, lambda t: t == INT)
            xs = [x for x in xs if isinstance(sc.theta.get(x), Eq)
                  and sc.theta[x].bound == lit_bound(k)]
            if xs and self.rng.random() < 0.6:
                return Malloc(goal.mode, replace(w, hi=var_bound(self.rng.choice(xs))))
        return Malloc(goal.mode, w)

    def p_subcast(self, sc, m, goal, d, ctx):
        w, xi = goal.pointee, goal.mode
        if isinstance(w, Array) and not _closed_bounds(w):
            return None
        src_mode = Mode.T if xi is Mode.U and Mode.T in ctx.allowed and self.rng.random() < 0.5 else xi
        if isinstance(w, Array):
            nt = w.nt or (self.cfg.nt_arrays and self.rng.random() < 0.5)
            src = Array(nt, w.lo, lit_bound(w.hi.offset + self.rng.randint(0, 1)), INT)
        elif self.cfg.arrays:
            nt = self.cfg.nt_arrays and self.rng.random() < 0.5
            src = Array(nt, lit_bound(0), lit_bound(self.rng.randint(1, 2)), INT)
        else:
            src = w
        return Cast(goal, self.expr(sc, m, Ptr(src, src_mode), d, ctx))

    def p_dyncast(self, sc, m, goal, d, ctx):
        if not self.cfg.arrays:
            return None
        w = goal.pointee
        nt = (isinstance(w, Array) and w.nt) or (self.cfg.nt_arrays and self.rng.random() < 0.3)
        src = Ptr(Array(nt, lit_bound(0), lit_bound(self.rng.randint(1, 4)), INT), goal.mode)
        return DynCast(goal, self.expr(sc, m, src, d, ctx))

    # -- functions and programs

    def build_funs(self) -> None:
        if not self.cfg.fun_ptrs:
            return
        next_addr = {Mode.C: 1, Mode.U: 1}
        modes = [Mode.C]
        if self.cfg.tainted_ptrs:
            modes.append(Mode.T)
        if self.cfg.unchecked:
            modes.append(Mode.U)
        for _ in range(self.rng.randint(1, 3)):
            mode = self.rng.choice(modes)
            region = region_of(mode)
            fd = self.fundef(mode, tuple(self.entries))
            entry = FunEntry(next_addr[region], region, fd)
            next_addr[region] += 1
            self.entries.append(entry)
            self.store = FunStore({(e.region, e.addr): e.fundef for e in self.entries})
            try:
                check_fundef(fd, region, TypeContext(self.heap, self.store))
            except TypeCheckError as err:
                raise GenerationError(f"generated function rejected: {err}") from None

    def fundef(self, mode: Mode, callees: tuple) -> FunDef:
        ptr_modes = {Mode.C: [Mode.C, Mode.T] if self.cfg.tainted_ptrs else [Mode.C],
                     Mode.T: [Mode.T], Mode.U: [Mode.T, Mode.U]}[mode]
        xi = self.rng.choice(ptr_modes)
        rng = self.rng
        kind = rng.choice(("int", "ptr", "dep") if self.cfg.arrays else ("int", "ptr"))
        a, n, p = self.name(), self.name(), self.name()
        if kind == "int":
            params = ((a, INT),) if rng.random() < 0.6 else ((a, INT), (n, INT))
            ret = INT
        elif kind == "ptr":
            goal = self.data_goal(Mode.C if mode is Mode.C else Mode.U,
                                  _Ctx(frozenset([xi]), False, ()))
            params = ((p, goal),)
            ret = INT if rng.random() < 0.7 else goal
        else:
            nt = self.cfg.nt_arrays and rng.random() < 0.5
            pt = Ptr(Array(nt, lit_bound(0), var_bound(n), INT), xi)
            params = ((n, INT), (p, pt))
            ret = INT if rng.random() < 0.6 else pt
        allowed = frozenset(ptr_modes)
        body_mode = Mode.C if mode is Mode.C else Mode.U
        ctx = _Ctx(allowed, mode is Mode.U, callees)
        sc = _Scope(dict(params), {})
        depth = max(2, self.cfg.max_depth // 2)
        return FunDef(ret, params, mode, self.expr(sc, body_mode, ret, depth, ctx))

    def program(self) -> Program:
        self.build_heap()
        self.build_funs()
        allowed = frozenset((Mode.C, Mode.T, Mode.U))
        ctx = _Ctx(allowed, True, tuple(self.entries))
        goal = INT if self.rng.random() < 0.7 else self.pick_goal(Mode.C, ctx)
        main = self.expr(_Scope({}, {}), Mode.C, goal,
                         self.cfg.max_depth, ctx)
        return Program(tuple(self.entries), self.heap_entries(), main)


def mode_usable(xi: Mode, m: Mode) -> bool:
    return xi is m or xi is Mode.T


def _case_rng(cfg: GenConfig, index: int, attempt: int) -> random.Random:
    corpus = "u" if cfg.unchecked else "c"
    return random.Random(f"{cfg.seed}/{corpus}/{index}/{attempt}")


def generate_program(cfg: GenConfig, index: int) -> Program:
    """The index-th program of the stream; deterministic in (cfg, index)."""
    for attempt in range(cfg.max_retries):
        try:
            p = _Generator(cfg, _case_rng(cfg, index, attempt)).program()
            check_program(p)
            return p
        except (GenerationError, TypeCheckError):
            continue
    raise GenerationError(f"no well-typed program for case {index} after {cfg.max_retries} attempts")


def generate_expr(goal, depth: int, seed: int = 0, cfg: GenConfig = GenConfig()) -> Expr:
    """A closed mode-c expression of the goal type over an empty store."""
    g = _Generator(cfg, random.Random(seed))
    ctx = _Ctx(frozenset((Mode.C, Mode.T)), False, ())
    return g.expr(_Scope({}, {}), Mode.C, goal, depth, ctx)


def gen_well_typed(cfg: GenConfig) -> Iterator[Program]:
    for i in range(cfg.count):
        yield generate_program(cfg, i)


def forms(p: Program) -> set:
    """Expression forms present in a program, for coverage counting."""
    seen = set()

    def walk(e):
        match e:
            case Deref(Add(a, b)):
                seen.add("Index")
                walk(a), walk(b)
                return
            case Assign(Add(a, b), v):
                seen.add("IndexAssign")
                walk(a), walk(b), walk(v)
                return
            case If(Deref(Var()), a, b):
                seen.add("IfNT")
                walk(a), walk(b)
                return
        seen.add(type(e).__name__)
        match e:
            case Add(a, b) | Assign(a, b):
                walk(a), walk(b)
            case Cast(_, b) | DynCast(_, b) | Deref(b) | Unchecked(_, b) | Checked(_, b) | Ret(_, _, b):
                walk(b)
            case Let(_, a, b):
                walk(a), walk(b)
            case If(c, a, b):
                walk(c), walk(a), walk(b)
            case Call(f, args):
                walk(f)
                for a in args:
                    walk(a)

    walk(p.main)
    for entry in p.funs:
        walk(entry.fundef.body)
    return seen


def coverage(programs) -> Counter:
    counts = Counter()
    for p in programs:
        counts.update(forms(p))
    return counts


# ------------------------------------------------------------- verdicts


@dataclass
class Verdict:
    ok: bool
    message: str = ""
    trace: list = field(default_factory=list)
    inconclusive: list = field(default_factory=list)  # join budget exhaustions
    pairs: int = 0


TRACE_TAIL = 30


def _tail(trace) -> list:
    return list(trace_records(trace))[-TRACE_TAIL:]


def _run(p: Program, fuel: int, policy: FaultPolicy, on_step) -> tuple:
    """Run p, feeding each step to on_step until it returns a message."""
    funs = FunStore.from_program(p)
    cfg = initial_config(p)
    trace = []
    for _ in range(fuel):
        try:
            s = step(cfg, funs, policy)
        except Stuck as err:
            return f"stuck: {err}", trace, funs
        if s is None:
            return None, trace, funs
        trace.append(s)
        msg = on_step(s, funs)
        if msg is not None:
            return msg, trace, funs
        if isinstance(s.after, Failure):
            return None, trace, funs
        cfg = s.after
    return None, trace, funs


def _verdict(msg, trace) -> Verdict:
    return Verdict(msg is None, msg or "", [] if msg is None else _tail(trace))


def check_progress(p: Program, fuel: int = 10_000) -> Verdict:
    msg, trace, _ = _run(p, fuel, NO_FAULTS, lambda s, funs: None)
    return _verdict(msg, trace)


def _checked_literals(cfg: Config) -> set:
    found = set()

    def walk(e):
        match e:
            case Lit(n, t):
                if n != 0 and is_checked(t) and not type_free_vars(t):
                    found.add((n, t))
            case Ret(_, saved, body):
                if saved is not None:
                    walk(saved)
                walk(body)
            case _:
                for child in _children(e):
                    walk(child)

    walk(cfg.expr)
    for v in cfg.stack.values():
        walk(v)
    return found


def _children(e) -> tuple:
    match e:
        case Add(a, b) | Assign(a, b) | Let(_, a, b):
            return (a, b)
        case Cast(_, b) | DynCast(_, b) | Deref(b) | Unchecked(_, b) | Checked(_, b):
            return (b,)
        case If(c, a, b):
            return (c, a, b)
        case Call(f, args):
            return (f, *args)
    return ()


class _Preservation:
    """Per-step oracle: types shrink along subtyping and checked pointers stay valid."""

    def __init__(self, p: Program):
        self.prev_type = check_program(p)

    def __call__(self, s, funs) -> Optional[str]:
        before_type = self.prev_type
        if isinstance(s.after, Failure):
            return None
        try:
            after_type = config_type(s.after, funs)
        except TypeCheckError as err:
            if s.mode is Mode.C:
                return f"{s.rule}: result no longer typechecks ({err})"
            after_type = None
        self.prev_type = after_type
        if s.mode is not Mode.C or before_type is None:
            return None
        if not subtype({}, after_type, before_type):
            from .syntax import print_type
            return f"{s.rule}: type {print_type(before_type)} became {print_type(after_type)}"
        if s.after.heap is not s.before.heap:
            for n, t in _checked_literals(s.before):
                if (const_valid({}, s.before.heap, funs, frozenset(), Mode.C, n, t)
                        and not const_valid({}, s.after.heap, funs, frozenset(), Mode.C, n, t)):
                    return f"{s.rule}: checked pointer {n} lost validity"
        return None


def check_preservation(p: Program, fuel: int = 10_000) -> Verdict:
    msg, trace, _ = _run(p, fuel, NO_FAULTS, _Preservation(p))
    return _verdict(msg, trace)


def _region_c(heap: Heap) -> dict:
    return {k: v for k, v in heap.cells.items() if k[0] is Mode.C}


def unchecked_step_violation(s) -> Optional[str]:
    """Region-C writes made by a step taken in unchecked context."""
    if s.mode is not Mode.U or isinstance(s.after, Failure):
        return None
    if s.after.heap is s.before.heap:
        return None
    if _region_c(s.after.heap) != _region_c(s.before.heap):
        return f"{s.rule} in unchecked context modified region c"
    return None


def exposure_violation(s) -> Optional[str]:
    """A checked value visible to a redex evaluated in unchecked context."""
    if s.mode is not Mode.U or isinstance(s.redex, (Checked, Unchecked)):
        return None
    stack = s.before.stack
    seen = []

    def walk(e, bound):
        match e:
            case Checked():
                return
            case Lit(_, t) if is_checked(t):
                seen.append(f"literal of checked type in {s.rule}")
            case Var(x) | Strlen(x) if x not in bound:
                v = stack.get(x)
                if v is not None and is_checked(v.ty):
                    seen.append(f"variable {x} holding a checked value in {s.rule}")
            case Let(x, a, b):
                walk(a, bound)
                walk(b, bound | {x})
            case Ret(x, _, b):
                walk(b, bound)
            case _:
                for child in _children(e):
                    walk(child, bound)

    walk(s.redex, frozenset())
    return seen[0] if seen else None


def check_unchecked_preservation(p: Program, fuel: int = 10_000,
                                 policy: FaultPolicy = NO_FAULTS) -> Verdict:
    msg, trace, _ = _run(p, fuel, policy, lambda s, funs: unchecked_step_violation(s))
    return _verdict(msg, trace)


def check_non_exposure(p: Program, fuel: int = 10_000, policy: FaultPolicy = NO_FAULTS) -> Verdict:
    msg, trace, _ = _run(p, fuel, policy, lambda s, funs: exposure_violation(s))
    return _verdict(msg, trace)


def check_non_crashing(p: Program, fuel: int = 10_000, policy: FaultPolicy = NO_FAULTS) -> Verdict:
    msg, trace, _ = _run(p, fuel, policy, lambda s, funs: None)
    return _verdict(msg, trace)


def check_unchecked_suite(p: Program, fuel: int, policy: FaultPolicy) -> dict:
    """The three unchecked-code properties over one shared faulty trace."""
    found = {"uncheckedpres": None, "nonexposure": None}

    def on_step(s, funs):
        for prop, oracle in (("uncheckedpres", unchecked_step_violation),
                             ("nonexposure", exposure_violation)):
            if found[prop] is None:
                found[prop] = oracle(s)
        return None

    msg, trace, _ = _run(p, fuel, policy, on_step)
    verdicts = {prop: _verdict(v, trace) for prop, v in found.items()}
    verdicts["noncrash"] = _verdict(msg, trace)
    return verdicts


# ------------------------------------------------------------ simulation


class JoinBudgetExceeded(Exception):
    pass


class _Orbit:
    """The forward run of a deterministic CoreC configuration, as join keys."""

    def __init__(self, cfg: CConfig, funs: CFunStore):
        self.cfg, self.funs = cfg, funs
        self.keys = {join_key(cfg)}
        self.alive = True
        self.stuck: Optional[str] = None

    def advance(self) -> Optional[tuple]:
        if not self.alive:
            return None
        try:
            nxt = c_step(self.cfg, self.funs)
        except CStuck as err:
            self.alive, self.stuck = False, str(err)
            return None
        if nxt is None:
            self.alive = False
            return None
        if isinstance(nxt, CFailure):
            self.alive = False
            key = join_key((nxt, self.cfg.heap))
        else:
            self.cfg = nxt
            key = join_key(nxt)
        self.keys.add(key)
        return key


def joins(a: _Orbit, b: _Orbit, budget: int) -> bool:
    """Whether two orbits meet within budget steps each; raises on budget exhaustion."""
    if a.keys & b.keys:
        return True
    for _ in range(budget):
        if not (a.alive or b.alive):
            return False
        ka, kb = a.advance(), b.advance()
        if (ka is not None and ka in b.keys) or (kb is not None and kb in a.keys):
            return True
    if a.alive or b.alive:
        raise JoinBudgetExceeded()
    return bool(a.keys & b.keys)


def reaches(a: _Orbit, target: tuple, budget: int) -> bool:
    if target in a.keys:
        return True
    for _ in range(budget):
        if not a.alive:
            return False
        if a.advance() == target:
            return True
    raise JoinBudgetExceeded()


def check_simulation(p: Program, fuel: int = 10_000, join_budget: int = 256) -> Verdict:
    """Every source step is matched by compiled runs that meet again."""
    funs = FunStore.from_program(p)
    cfuns = compile_funs(p)
    cfg = initial_config(p)
    trace = []
    inconclusive = []
    pairs = 0
    try:
        orbit = _Orbit(compile_config(cfg), cfuns)
    except (CompileError, TypeCheckError) as err:
        return Verdict(False, f"initial configuration does not compile: {err}")
    for i in range(fuel):
        try:
            s = step(cfg, funs)
        except Stuck as err:
            return Verdict(False, f"source stuck: {err}", _tail(trace))
        if s is None:
            break
        trace.append(s)
        pairs += 1
        try:
            if isinstance(s.after, Failure):
                target = join_key((CFailure(s.after.value), erase_heap(cfg.heap)))
                if not reaches(orbit, target, join_budget):
                    return Verdict(False, _mismatch(i, s, orbit, "does not reach the same failure"),
                                   _tail(trace), inconclusive, pairs)
                break
            try:
                nxt = _Orbit(compile_config(s.after), cfuns)
            except (CompileError, TypeCheckError) as err:
                return Verdict(False, f"step {i} ({s.rule}): result does not compile: {err}",
                               _tail(trace), inconclusive, pairs)
            if not joins(orbit, nxt, join_budget):
                return Verdict(False, _mismatch(i, s, orbit, "compiled runs never meet", nxt),
                               _tail(trace), inconclusive, pairs)
        except JoinBudgetExceeded:
            inconclusive.append(f"step {i} ({s.rule}): join budget {join_budget} exceeded")
            if isinstance(s.after, Failure):
                break
            nxt = _Orbit(compile_config(s.after), cfuns)
        orbit = nxt
        cfg = s.after
    return Verdict(True, "", [], inconclusive, pairs)


def _mismatch(i, s, a: _Orbit, what: str, b: Optional[_Orbit] = None) -> str:
    detail = [f"step {i} ({s.rule}): {what}"]
    for name, o in (("source", a), ("target", b)):
        if o is not None and o.stuck:
            detail.append(f"{name} compiled run stuck: {o.stuck}")
    return "; ".join(detail)


# --------------------------------------------------------------- reports


@dataclass
class CheckReport:
    property: str
    cases: int = 0
    failures: list = field(default_factory=list)
    inconclusive: list = field(default_factory=list)
    pairs: int = 0
    wall_time: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def inconclusive_rate(self) -> float:
        programs = {entry["index"] for entry in self.inconclusive}
        return len(programs) / self.cases if self.cases else 0.0

    def to_dict(self) -> dict:
        """Deterministic content only; wall time is reported separately."""
        d = {"property": self.property, "cases": self.cases, "passed": self.passed,
             "failures": self.failures}
        if self.property == "simulation":
            d["pairs"] = self.pairs
            d["inconclusive"] = self.inconclusive
        return d


def _failure(cfg: GenConfig, index: int, p: Program, v: Verdict, **extra) -> dict:
    return {"seed": cfg.seed, "index": index, "unchecked": cfg.unchecked, **extra,
            "message": v.message, "program": print_program(p), "trace": v.trace}


def run_checks(props, cfg: GenConfig, fuel: int = 10_000, join_budget: int = 256,
               on_case: Optional[Callable[[str, int], None]] = None) -> dict:
    """Run the selected properties over fresh corpora; returns one report per property."""
    props = [p for p in PROPERTIES if p in set(props)]
    reports = {p: CheckReport(p) for p in props}
    checked = [p for p in props if p in CHECKED_SUITE]
    unchecked = [p for p in props if p in UNCHECKED_SUITE]
    if checked:
        ccfg = replace(cfg, unchecked=False)
        for i in range(cfg.count):
            p = generate_program(ccfg, i)
            if "progress" in checked or "preservation" in checked:
                _timed(reports, checked_trace_checks(p, fuel), ccfg, i, p)
            if "simulation" in checked:
                start = time.perf_counter()
                v = check_simulation(p, fuel, join_budget)
                r = reports["simulation"]
                r.wall_time += time.perf_counter() - start
                r.cases += 1
                r.pairs += v.pairs
                r.inconclusive += [{"index": i, "seed": cfg.seed, "message": m,
                                    "program": print_program(p)} for m in v.inconclusive]
                if not v.ok:
                    r.failures.append(_failure(ccfg, i, p, v))
            if on_case:
                on_case("checked", i)
    if unchecked:
        ucfg = replace(cfg, unchecked=True)
        for i in range(cfg.count):
            p = generate_program(ucfg, i)
            for rate in cfg.crash_rates:
                policy = FaultPolicy(rate, seed=hash_seed(cfg.fault_seed, i, rate))
                start = time.perf_counter()
                verdicts = check_unchecked_suite(p, fuel, policy)
                elapsed = (time.perf_counter() - start) / len(unchecked)
                for prop in unchecked:
                    r = reports[prop]
                    r.wall_time += elapsed
                    r.cases += 1
                    if not verdicts[prop].ok:
                        r.failures.append(_failure(ucfg, i, p, verdicts[prop], crash_rate=rate))
            if on_case:
                on_case("unchecked", i)
    return reports


def checked_trace_checks(p: Program, fuel: int) -> dict:
    """Progress and preservation over one fault-free trace."""
    start = time.perf_counter()
    oracle = _Preservation(p)
    found = []

    def on_step(s, funs):
        if not found:
            msg = oracle(s, funs)
            if msg is not None:
                found.append(msg)
        return None

    msg, trace, _ = _run(p, fuel, NO_FAULTS, on_step)
    elapsed = time.perf_counter() - start
    return {"progress": (_verdict(msg, trace), elapsed / 2),
            "preservation": (_verdict(found[0] if found else None, trace), elapsed / 2)}


def _timed(reports, results, cfg, i, p) -> None:
    for prop, (v, elapsed) in results.items():
        if prop in reports:
            r = reports[prop]
            r.cases += 1
            r.wall_time += elapsed
            if not v.ok:
                r.failures.append(_failure(cfg, i, p, v))


def hash_seed(fault_seed: int, index: int, rate: float) -> int:
    """Stable per-case fault seed (independent of PYTHONHASHSEED)."""
    return (fault_seed * 1_000_003 + index) * 1_009 + round(rate * 1000)
