"""Small-step semantics over a stack, a two-region heap and a function store.

A configuration is (stack, heap, expression). ``step`` finds the redex
through the evaluation-context grammar, takes the context mode from the
innermost checked/unchecked block, and either applies a rule or, in
unchecked context, the crash rule that replaces the redex by ``0 : τ``.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Optional, Union

from .lattice import Eq
from .store import FunStore, Heap, region_of
from .syntax import (
    INT, Add, Array, Assign, Call, Cast, Checked, Deref, DynCast, Expr,
    Fun, If, IntType, Let, Lit, Malloc, Mode, Program, Ptr, Ret, Strlen,
    Unchecked, Var, lit_bound, print_expr, subst_type, type_free_vars,
)
from .typecheck import (
    Checker, TypeCheckError, TypeContext, const_valid, size_of,
)


class Failure(enum.Enum):
    NULL = "null"
    BOUNDS = "bounds"


@dataclass(frozen=True)
class Config:
    stack: Mapping[str, Lit]
    heap: Heap
    expr: Expr


@dataclass(frozen=True)
class StepResult:
    stack: Mapping[str, Lit]
    heap: Heap
    result: Union[Expr, Failure]
    rule: str


# -------------------------------------------------------- type closing


def close_type(stack: Mapping[str, Lit], t):
    """φ(τ): replace bound variables by the integers the stack holds."""
    fv = type_free_vars(t)
    if not fv:
        return t
    sigma = {x: lit_bound(stack[x].n) for x in fv
             if x in stack and stack[x].ty == INT}
    return subst_type(t, sigma)


def _closed_array(stack, t) -> Optional[tuple[Ptr, Array]]:
    t = close_type(stack, t)
    w = t.pointee
    if w.lo.var is not None or w.hi.var is not None:
        return None
    return t, w


def in_deref_range(w: Array) -> bool:
    """0 ∈ [lo, hi) for arrays and 0 ∈ [lo, hi] for NT arrays."""
    lo, hi = w.lo.offset, w.hi.offset
    return lo <= 0 <= hi if w.nt else lo <= 0 < hi


def in_write_range(w: Array) -> bool:
    return w.lo.offset <= 0 < w.hi.offset


# ------------------------------------------------------- decomposition

_VALUE = Lit


def is_value(e: Expr) -> bool:
    return type(e) is Lit


def if_nt_applies(e: If, stack, heap: Heap) -> bool:
    """Guard shape of the NT widening rule, checked against the state."""
    c = e.cond
    if not (type(c) is Deref and type(c.body) is Var):
        return False
    v = stack.get(c.body.name)
    if v is None or not isinstance(v.ty, Ptr) or v.ty.mode is not Mode.C:
        return False
    w = v.ty.pointee
    if not (isinstance(w, Array) and w.nt and w.lo.var is None and w.hi.var is None):
        return False
    if not (w.lo.offset <= 0 <= w.hi.offset) or v.n == 0:
        return False
    cell = heap.get(Mode.C, v.n)
    return cell is not None and cell.n != 0


def decompose(e: Expr, stack=None, heap=None) -> Optional[tuple[list, Expr]]:
    """Path of (node, child index) frames down to the redex; None for values."""
    if is_value(e):
        return None
    path = []
    while True:
        t = type(e)
        if t is Add or t is Assign:
            a, b = (e.left, e.right) if t is Add else (e.target, e.value)
            if not is_value(a):
                path.append((e, 0)); e = a; continue
            if not is_value(b):
                path.append((e, 1)); e = b; continue
            return path, e
        if t in (Cast, DynCast, Deref, Ret, Checked, Unchecked):
            if not is_value(e.body):
                path.append((e, 0)); e = e.body; continue
            return path, e
        if t is Let:
            if not is_value(e.bound):
                path.append((e, 0)); e = e.bound; continue
            return path, e
        if t is If:
            if stack is not None and if_nt_applies(e, stack, heap):
                return path, e
            if not is_value(e.cond):
                path.append((e, 0)); e = e.cond; continue
            return path, e
        if t is Call:
            if not is_value(e.fn):
                path.append((e, 0)); e = e.fn; continue
            for i, a in enumerate(e.args):
                if not is_value(a):
                    path.append((e, i + 1)); e = a; break
            else:
                return path, e
            continue
        return path, e  # Var, Strlen, Malloc


def context_mode(path) -> Mode:
    for node, _ in reversed(path):
        if type(node) is Checked:
            return Mode.C
        if type(node) is Unchecked:
            return Mode.U
    return Mode.C


def replace_child(node: Expr, i: int, child: Expr) -> Expr:
    t = type(node)
    if t is Add:
        return Add(child, node.right) if i == 0 else Add(node.left, child)
    if t is Assign:
        return Assign(child, node.value) if i == 0 else Assign(node.target, child)
    if t is Cast:
        return Cast(node.ty, child)
    if t is DynCast:
        return DynCast(node.ty, child)
    if t is Deref:
        return Deref(child)
    if t is Ret:
        return Ret(node.name, node.saved, child)
    if t is Checked:
        return Checked(node.vars, child)
    if t is Unchecked:
        return Unchecked(node.vars, child)
    if t is Let:
        return Let(node.name, child, node.body)
    if t is If:
        return If(child, node.then, node.else_)
    if t is Call:
        if i == 0:
            return Call(child, node.args)
        args = list(node.args)
        args[i - 1] = child
        return Call(node.fn, tuple(args))
    raise ValueError(f"no evaluation context through {t.__name__}")


def plug(path, e: Expr) -> Expr:
    for node, i in reversed(path):
        e = replace_child(node, i, e)
    return e


# --------------------------------------------------------------- rules


def _with(stack, x, v) -> dict:
    s = dict(stack)
    if v is None:
        s.pop(x, None)
    else:
        s[x] = v
    return s


def _verify(heap: Heap, funs: FunStore, n: int, t) -> bool:
    """Dynamic check of a tainted pointer against region U."""
    return const_valid({}, heap, funs, frozenset(), Mode.U, n, t)


def compute_step(stack, heap: Heap, funs: FunStore, redex: Expr) -> Optional[StepResult]:
    """One rule application at the redex, or None when no rule matches."""
    same = lambda result, rule: StepResult(stack, heap, result, rule)  # noqa: E731
    match redex:
        case Var(x):
            if x not in stack:
                return None
            return same(stack[x], "S-Var")

        case Add(Lit(n1, IntType()), Lit(n2, IntType())):
            return same(Lit(n1 + n2, INT), "S-Add")

        case Add(Lit(n1, Ptr(Array()) as t), Lit(n2, IntType())):
            if n1 == 0:
                return same(Failure.NULL, "S-AddArrNull")
            closed = _closed_array(stack, t)
            if closed is None:
                return None
            t, w = closed
            shifted = Array(w.nt, w.lo.shift(-n2), w.hi.shift(-n2), w.elem)
            return same(Lit(n1 + n2, Ptr(shifted, t.mode)), "S-AddArr")

        case Cast(t, Lit(n, _)):
            return same(Lit(n, close_type(stack, t)), "S-Cast")

        case DynCast(t, Lit(n, src)):
            return _dyncast(stack, heap, t, n, src)

        case Deref(Lit(n, Ptr() as t)):
            return _deref(stack, heap, funs, n, t)

        case Assign(Lit(n, Ptr() as t), Lit(v, _)):
            return _assign(stack, heap, funs, n, t, v)

        case Malloc(xi, w):
            w = close_type(stack, w)
            if isinstance(w, Fun) or type_free_vars(w):
                return None
            if isinstance(w, Array):
                if w.lo.offset != 0 or w.hi.offset <= 0:
                    return same(Failure.BOUNDS, "S-MallocBound")
                cells = [Lit(0, w.elem)] * size_of(w)
            else:
                cells = [Lit(0, w)]
            addr, heap2 = heap.alloc(region_of(xi), cells)
            return StepResult(stack, heap2, Lit(addr, Ptr(w, xi)), "S-Malloc")

        case Let(x, Lit(n, t), body):
            v = Lit(n, close_type(stack, t))
            return StepResult(_with(stack, x, v), heap, Ret(x, stack.get(x), body), "S-Let")

        case Ret(x, saved, Lit(n, t)):
            v = Lit(n, close_type(stack, t))
            return StepResult(_with(stack, x, saved), heap, v, "S-Ret")

        case If(Deref(Var(x)), then, _) if if_nt_applies(redex, stack, heap):
            v = stack[x]
            w = v.ty.pointee
            if w.hi.offset < 1:
                widened = Array(w.nt, w.lo, lit_bound(1), w.elem)
                stack = _with(stack, x, Lit(v.n, Ptr(widened, v.ty.mode)))
            return StepResult(stack, heap, then, "S-IfNTNotC")

        case If(Lit(n, _), then, else_):
            return same(then, "S-IfT") if n != 0 else same(else_, "S-IfF")

        case Call(Lit(n, Ptr(Fun()) as t), args) if all(is_value(a) for a in args):
            return _call(stack, heap, funs, n, t, args)

        case Checked(_, Lit() as v):
            return same(v, "S-Checked")

        case Unchecked(_, Lit() as v):
            return same(v, "S-Unchecked")

        case Strlen(x):
            return _strlen(stack, heap, funs, x)
    return None


def _dyncast(stack, heap, t, n, src) -> Optional[StepResult]:
    target = close_type(stack, t)
    source = close_type(stack, src)
    same = lambda result, rule: StepResult(stack, heap, result, rule)  # noqa: E731
    if not (isinstance(target, Ptr) and isinstance(source, Ptr)):
        return same(Lit(n, target), "S-DynCast")
    if n == 0 or not (isinstance(target.pointee, Array) or isinstance(source.pointee, Array)):
        return same(Lit(n, target), "S-DynCast")
    lo_t, hi_t = _extent(target.pointee)
    lo_s, hi_s = _extent(source.pointee)
    if None in (lo_t, hi_t, lo_s, hi_s):
        return None
    if lo_s <= lo_t and hi_t <= hi_s:
        return same(Lit(n, target), "S-DynCast")
    return same(Failure.BOUNDS, "S-DynCastBound")


def _extent(w) -> tuple[Optional[int], Optional[int]]:
    if isinstance(w, Array):
        return w.lo.offset if w.lo.var is None else None, w.hi.offset if w.hi.var is None else None
    return 0, 1


def _deref(stack, heap: Heap, funs, n, t: Ptr) -> Optional[StepResult]:
    same = lambda result, rule: StepResult(stack, heap, result, rule)  # noqa: E731
    w = t.pointee
    if isinstance(w, Fun):
        return None
    suffix = {Mode.C: "C", Mode.T: "T", Mode.U: "U"}[t.mode]
    if isinstance(w, Array):
        closed = _closed_array(stack, t)
        if closed is None:
            return None
        t, w = closed
        if not in_deref_range(w):
            return same(Failure.BOUNDS, "S-DefNTArrayBound" if w.nt else "S-DefArrayBound")
        rule, elem = f"S-DefArray{suffix}", w.elem
    else:
        rule, elem = f"S-Def{suffix}", w
    if n == 0:
        return same(Failure.NULL, "S-DefNull")
    if t.mode is Mode.T and not _verify(heap, funs, n, t):
        return same(Failure.BOUNDS, "S-DefTVerify")
    cell = heap.get(region_of(t.mode), n)
    if cell is None:
        return None
    return same(Lit(cell.n, close_type(stack, elem)), rule)


def _assign(stack, heap: Heap, funs, n, t: Ptr, v) -> Optional[StepResult]:
    same = lambda result, rule: StepResult(stack, heap, result, rule)  # noqa: E731
    w = t.pointee
    if isinstance(w, Fun):
        return None
    suffix = {Mode.C: "C", Mode.T: "T", Mode.U: "U"}[t.mode]
    if isinstance(w, Array):
        closed = _closed_array(stack, t)
        if closed is None:
            return None
        t, w = closed
        if not in_write_range(w):
            return same(Failure.BOUNDS, "S-AssignArrBound")
        rule, elem = f"S-AssignArr{suffix}", w.elem
    else:
        rule, elem = f"S-Assign{suffix}", w
    if n == 0:
        return same(Failure.NULL, "S-AssignNull")
    if t.mode is Mode.T and not _verify(heap, funs, n, t):
        return same(Failure.BOUNDS, "S-AssignTVerify")
    region = region_of(t.mode)
    cell = heap.get(region, n)
    if cell is None:
        return None
    return StepResult(stack, heap.write(region, n, Lit(v, cell.ty)),
                      Lit(v, close_type(stack, elem)), rule)


def _call(stack, heap: Heap, funs: FunStore, n, t: Ptr, args) -> Optional[StepResult]:
    same = lambda result, rule: StepResult(stack, heap, result, rule)  # noqa: E731
    if n == 0:
        return same(Failure.NULL, "S-FunNull")
    region = region_of(t.mode)
    fd = funs.get(region, n)
    if t.mode is Mode.T and not _verify(heap, funs, n, t):
        return same(Failure.BOUNDS, "S-FunTVerify")
    if fd is None or fd.mode is not t.mode or len(fd.params) != len(args):
        return None
    sigma = {x: lit_bound(a.n) for (x, ty), a in zip(fd.params, args) if ty == INT}
    body: Expr = Cast(subst_type(fd.ret, sigma), fd.body)
    for (x, ty), a in reversed(list(zip(fd.params, args))):
        body = Let(x, Lit(a.n, subst_type(ty, sigma)), body)
    rule = {Mode.C: "S-FunC", Mode.T: "S-FunT", Mode.U: "S-FunU"}[t.mode]
    return same(body, rule)


def _strlen(stack, heap: Heap, funs, x) -> Optional[StepResult]:
    v = stack.get(x)
    if v is None or not isinstance(v.ty, Ptr):
        return None
    t = v.ty
    w = t.pointee
    if not (isinstance(w, Array) and w.nt) or w.lo.var is not None or w.hi.var is not None:
        return None
    same = lambda result, rule: StepResult(stack, heap, result, rule)  # noqa: E731
    if not (w.lo.offset <= 0 <= w.hi.offset):
        return same(Failure.BOUNDS, "S-StrlenBound")
    if v.n == 0:
        return same(Failure.NULL, "S-StrlenNull")
    if t.mode is Mode.T and not _verify(heap, funs, v.n, t):
        return same(Failure.BOUNDS, "S-StrlenVerify")
    region = region_of(t.mode)
    k = 0
    while True:
        cell = heap.get(region, v.n + k)
        if cell is None:
            return same(Failure.BOUNDS, "S-StrlenBound")
        if cell.n == 0:
            break
        k += 1
    if k > w.hi.offset:
        widened = Ptr(Array(True, w.lo, lit_bound(k), w.elem), t.mode)
        stack = _with(stack, x, Lit(v.n, widened))
    return StepResult(stack, heap, Lit(k, INT), "S-Strlen")


# -------------------------------------------------------- config typing


def spine_frames(e: Expr) -> list:
    """Ret frames enclosing the redex, outermost first, the redex included."""
    d = decompose(e)
    if d is None:
        return []
    path, redex = d
    frames = [n for n, _ in path if type(n) is Ret]
    return frames + [redex] if type(redex) is Ret else frames


def spine_bindings(e: Expr, stack: Mapping[str, Lit]) -> tuple[dict, dict]:
    """Inner value of each ret frame on the spine, and the outermost stack.

    The stack holds the innermost binding of every variable; walking the
    ret frames from the inside out undoes each one to recover what the
    surrounding code sees.
    """
    frames = spine_frames(e)
    values = {}
    env = dict(stack)
    for frame in reversed(frames):
        values[id(frame)] = env.get(frame.name)
        if frame.saved is None:
            env.pop(frame.name, None)
        else:
            env[frame.name] = frame.saved
    return values, env


def stack_theta(stack: Mapping[str, Lit]) -> dict:
    return {x: Eq(lit_bound(v.n)) for x, v in stack.items() if v.ty == INT}


def config_type(cfg: Config, funs: FunStore, m: Mode = Mode.C):
    """Type of a whole configuration, with Γ and Θ recovered from the stack."""
    values, env = spine_bindings(cfg.expr, cfg.stack)
    gamma = {x: v.ty for x, v in env.items()}
    ctx = TypeContext(cfg.heap, funs, values)
    return Checker(ctx).check(gamma, stack_theta(env), m, cfg.expr)


def redex_type(stack, heap: Heap, funs: FunStore, redex: Expr):
    """type(e') for the crash rule: the redex typed against the current stack."""
    gamma = {x: v.ty for x, v in stack.items()}
    theta = stack_theta(stack)
    for m in (Mode.U, Mode.C):
        try:
            return Checker(TypeContext(heap, funs)).check(gamma, theta, m, redex)
        except TypeCheckError:
            continue
    return INT


# ------------------------------------------------------------- stepping


@dataclass
class FaultPolicy:
    rate: float = 0.0
    seed: int = 0
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError("crash rate must lie in [0, 1]")
        self.rng = random.Random(self.seed)

    def fires(self) -> bool:
        return self.rate > 0 and (self.rate >= 1.0 or self.rng.random() < self.rate)


NO_FAULTS = FaultPolicy(0.0)


class StepKind(enum.Enum):
    RULE = "rule"
    FAULT = "fault"          # crash rule chosen by the policy
    RECOVER = "recover"      # crash rule as the only move in unchecked code


@dataclass(frozen=True)
class Step:
    before: Config
    after: Union[Config, Failure]
    mode: Mode
    kind: StepKind
    rule: str
    redex: Expr


class Stuck(Exception):
    def __init__(self, cfg: Config, redex: Expr, mode: Mode):
        self.cfg, self.redex, self.mode = cfg, redex, mode
        super().__init__(f"no rule applies to {print_expr(redex)} in {mode.value} mode")


def step(cfg: Config, funs: FunStore, policy: FaultPolicy = NO_FAULTS) -> Optional[Step]:
    """One transition; None when cfg is a value; raises Stuck when no rule fits."""
    d = decompose(cfg.expr, cfg.stack, cfg.heap)
    if d is None:
        return None
    path, redex = d
    m = context_mode(path)
    if m is Mode.U and type(redex) is not Ret and policy.fires():
        t = redex_type(cfg.stack, cfg.heap, funs, redex)
        after = Config(cfg.stack, cfg.heap, plug(path, Lit(0, t)))
        return Step(cfg, after, m, StepKind.FAULT, "S-Crash", redex)
    r = compute_step(cfg.stack, cfg.heap, funs, redex)
    if r is None:
        if m is Mode.U and type(redex) is not Ret:
            t = redex_type(cfg.stack, cfg.heap, funs, redex)
            after = Config(cfg.stack, cfg.heap, plug(path, Lit(0, t)))
            return Step(cfg, after, m, StepKind.RECOVER, "S-Crash", redex)
        raise Stuck(cfg, redex, m)
    if isinstance(r.result, Failure):
        return Step(cfg, r.result, m, StepKind.RULE, r.rule, redex)
    return Step(cfg, Config(r.stack, r.heap, plug(path, r.result)), m, StepKind.RULE, r.rule, redex)


# ---------------------------------------------------------------- eval


class OutcomeKind(enum.Enum):
    VALUE = "value"
    NULL = "null"
    BOUNDS = "bounds"
    STUCK = "stuck"
    OUT_OF_FUEL = "out-of-fuel"


@dataclass
class Outcome:
    kind: OutcomeKind
    value: Optional[Lit]
    trace: list
    final: Config
    stuck: Optional[Stuck] = None

    def describe(self) -> str:
        if self.kind is OutcomeKind.VALUE:
            from .syntax import print_type
            return f"value {self.value.n} : {print_type(self.value.ty)}"
        return self.kind.value


def initial_config(p: Program) -> Config:
    return Config({}, Heap.from_program(p), p.main)


def run(cfg: Config, funs: FunStore, fuel: int, policy: FaultPolicy = NO_FAULTS,
        on_step: Optional[Callable[[Step], None]] = None, keep_trace: bool = True) -> Outcome:
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    trace = []
    for _ in range(fuel):
        try:
            s = step(cfg, funs, policy)
        except Stuck as err:
            return Outcome(OutcomeKind.STUCK, None, trace, cfg, err)
        if s is None:
            return Outcome(OutcomeKind.VALUE, cfg.expr, trace, cfg)
        if keep_trace:
            trace.append(s)
        if on_step is not None:
            on_step(s)
        if isinstance(s.after, Failure):
            kind = OutcomeKind.NULL if s.after is Failure.NULL else OutcomeKind.BOUNDS
            return Outcome(kind, None, trace, cfg)
        cfg = s.after
    if is_value(cfg.expr):
        return Outcome(OutcomeKind.VALUE, cfg.expr, trace, cfg)
    return Outcome(OutcomeKind.OUT_OF_FUEL, None, trace, cfg)


def eval_program(p: Program, fuel: int = 10_000, policy: FaultPolicy = NO_FAULTS,
                 **kwargs) -> Outcome:
    return run(initial_config(p), FunStore.from_program(p), fuel, policy, **kwargs)


def trace_records(trace) -> Iterator[dict]:
    """Line-oriented trace export: index, mode, rule, redex."""
    for i, s in enumerate(trace):
        yield {"step": i, "mode": s.mode.value, "rule": s.rule,
               "kind": s.kind.value, "redex": print_expr(s.redex)}
