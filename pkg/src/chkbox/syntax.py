"""Abstract syntax of the checked/tainted/unchecked pointer calculus.

Types, bounds, expressions and whole programs, plus the parenthesized
textual format used by ``.chk`` files and a handful of structural helpers
(free variables, bound substitution, fresh names).
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Mapping, Optional, Union

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class Mode(enum.Enum):
    """Pointer mode. Context modes are the {C, U} restriction."""

    C = "c"
    T = "t"
    U = "u"

    def __repr__(self) -> str:
        return f"Mode.{self.name}"


CONTEXT_MODES = (Mode.C, Mode.U)


@dataclass(frozen=True, slots=True)
class Bound:
    """Either a literal ``offset`` (var is None) or ``var + offset``."""

    var: Optional[str]
    offset: int

    @property
    def is_literal(self) -> bool:
        return self.var is None

    def shift(self, n: int) -> "Bound":
        return Bound(self.var, self.offset + n)

    def __str__(self) -> str:
        return str(self.offset) if self.var is None else f"{self.var}+{self.offset}"


def lit_bound(n: int) -> Bound:
    return Bound(None, n)


def var_bound(x: str, n: int = 0) -> Bound:
    return Bound(x, n)


# ---------------------------------------------------------------- types


@dataclass(frozen=True, slots=True)
class IntType:
    pass


INT = IntType()


@dataclass(frozen=True, slots=True)
class Ptr:
    pointee: "ObjectType"
    mode: Mode


@dataclass(frozen=True, slots=True)
class Array:
    nt: bool
    lo: Bound
    hi: Bound
    elem: "WordType"


@dataclass(frozen=True, slots=True)
class Fun:
    binders: tuple[str, ...]
    params: tuple["WordType", ...]
    ret: "WordType"


WordType = Union[IntType, Ptr]
ObjectType = Union[IntType, Ptr, Array, Fun]


def array_ptr(lo, hi, elem: WordType, mode: Mode, nt: bool = False) -> Ptr:
    """Shorthand accepting ints or Bounds for the two limits."""
    lo = lo if isinstance(lo, Bound) else lit_bound(lo)
    hi = hi if isinstance(hi, Bound) else lit_bound(hi)
    return Ptr(Array(nt, lo, hi, elem), mode)


def is_array_ptr(t) -> bool:
    return isinstance(t, Ptr) and isinstance(t.pointee, Array)


def is_fun_ptr(t) -> bool:
    return isinstance(t, Ptr) and isinstance(t.pointee, Fun)


# ---------------------------------------------------------- expressions


@dataclass(frozen=True, slots=True)
class Lit:
    n: int
    ty: WordType


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class Add:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True, slots=True)
class Cast:
    ty: WordType
    body: "Expr"


@dataclass(frozen=True, slots=True)
class DynCast:
    ty: WordType
    body: "Expr"


@dataclass(frozen=True, slots=True)
class Ret:
    """Machine-introduced scope end; ``saved`` is None when x was unbound."""

    name: str
    saved: Optional[Lit]
    body: "Expr"


@dataclass(frozen=True, slots=True)
class Strlen:
    name: str


@dataclass(frozen=True, slots=True)
class Malloc:
    mode: Mode
    ty: ObjectType


@dataclass(frozen=True, slots=True)
class Deref:
    body: "Expr"


@dataclass(frozen=True, slots=True)
class Assign:
    target: "Expr"
    value: "Expr"


@dataclass(frozen=True, slots=True)
class Let:
    name: str
    bound: "Expr"
    body: "Expr"


@dataclass(frozen=True, slots=True)
class If:
    cond: "Expr"
    then: "Expr"
    else_: "Expr"


@dataclass(frozen=True, slots=True)
class Call:
    fn: "Expr"
    args: tuple["Expr", ...]


@dataclass(frozen=True, slots=True)
class Unchecked:
    vars: tuple[str, ...]
    body: "Expr"


@dataclass(frozen=True, slots=True)
class Checked:
    vars: tuple[str, ...]
    body: "Expr"


Expr = Union[Lit, Var, Add, Cast, DynCast, Ret, Strlen, Malloc, Deref,
             Assign, Let, If, Call, Unchecked, Checked]
Value = Lit


def null(pointee: ObjectType, mode: Mode) -> Lit:
    return Lit(0, Ptr(pointee, mode))


def int_lit(n: int) -> Lit:
    return Lit(n, INT)


# -------------------------------------------------------------- programs


@dataclass(frozen=True, slots=True)
class FunDef:
    ret: WordType
    params: tuple[tuple[str, WordType], ...]
    mode: Mode
    body: Expr

    @property
    def int_params(self) -> tuple[str, ...]:
        return tuple(x for x, t in self.params if t == INT)

    def fun_type(self) -> Fun:
        return Fun(self.int_params, tuple(t for _, t in self.params), self.ret)


@dataclass(frozen=True, slots=True)
class FunEntry:
    addr: int
    region: Mode
    fundef: FunDef


@dataclass(frozen=True, slots=True)
class HeapEntry:
    region: Mode
    addr: int
    value: Lit


@dataclass(frozen=True, slots=True)
class Program:
    funs: tuple[FunEntry, ...] = ()
    heap: tuple[HeapEntry, ...] = ()
    main: Expr = field(default_factory=lambda: Lit(0, INT))

    def fun_at(self, region: Mode, addr: int) -> Optional[FunDef]:
        for entry in self.funs:
            if entry.region == region and entry.addr == addr:
                return entry.fundef
        return None


# ------------------------------------------------------------ fresh names

_fresh_counter = itertools.count()


def fresh(base: str) -> str:
    """A name that cannot clash with source identifiers ('#' is reserved)."""
    base = base.split("#", 1)[0]
    return f"{base}#{next(_fresh_counter)}"


# ------------------------------------------------------- free variables


def bound_vars(b: Bound) -> set[str]:
    return set() if b.var is None else {b.var}


def type_free_vars(t: ObjectType) -> set[str]:
    match t:
        case IntType():
            return set()
        case Ptr(pointee, _):
            return type_free_vars(pointee)
        case Array(_, lo, hi, elem):
            return bound_vars(lo) | bound_vars(hi) | type_free_vars(elem)
        case Fun(binders, params, ret):
            inner = set().union(*(type_free_vars(p) for p in params)) | type_free_vars(ret)
            return inner - set(binders)
    raise TypeError(f"not a type: {t!r}")


def free_vars(e: Expr) -> set[str]:
    """Free term variables. Let and Ret bind; block variable lists do not."""
    match e:
        case Lit() | Malloc():
            return set()
        case Var(x) | Strlen(x):
            return {x}
        case Add(a, b) | Assign(a, b):
            return free_vars(a) | free_vars(b)
        case Cast(_, body) | DynCast(_, body) | Deref(body):
            return free_vars(body)
        case Ret(x, _, body):
            return free_vars(body) - {x}
        case Let(x, bound, body):
            return free_vars(bound) | (free_vars(body) - {x})
        case If(c, t, f):
            return free_vars(c) | free_vars(t) | free_vars(f)
        case Call(fn, args):
            return free_vars(fn).union(*(free_vars(a) for a in args))
        case Unchecked(_, body) | Checked(_, body):
            return free_vars(body)
    raise TypeError(f"not an expression: {e!r}")


def type_vars_in_expr(e: Expr) -> set[str]:
    """Variables mentioned by bounds inside type annotations of e."""
    match e:
        case Lit(_, t) | Malloc(_, t):
            return type_free_vars(t)
        case Cast(t, body) | DynCast(t, body):
            return type_free_vars(t) | type_vars_in_expr(body)
    return set().union(*(type_vars_in_expr(c) for c in children(e)))


def children(e: Expr) -> tuple[Expr, ...]:
    match e:
        case Add(a, b) | Assign(a, b):
            return (a, b)
        case Cast(_, body) | DynCast(_, body) | Deref(body) | Ret(_, _, body):
            return (body,)
        case Unchecked(_, body) | Checked(_, body):
            return (body,)
        case Let(_, bound, body):
            return (bound, body)
        case If(c, t, f):
            return (c, t, f)
        case Call(fn, args):
            return (fn, *args)
    return ()


def subterms(e: Expr) -> Iterator[Expr]:
    yield e
    for c in children(e):
        yield from subterms(c)


def expr_size(e: Expr) -> int:
    return sum(1 for _ in subterms(e))


def contains_ret(e: Expr) -> bool:
    return any(isinstance(s, Ret) for s in subterms(e))


# ---------------------------------------------------------- substitution


def subst_bound(b: Bound, sigma: Mapping[str, Bound]) -> Bound:
    if b.var is not None and b.var in sigma:
        return sigma[b.var].shift(b.offset)
    return b


def subst_type(t, sigma: Mapping[str, Bound]):
    """Replace bound variables inside t, renaming Fun binders apart."""
    if not sigma:
        return t
    match t:
        case IntType():
            return t
        case Ptr(pointee, mode):
            return Ptr(subst_type(pointee, sigma), mode)
        case Array(nt, lo, hi, elem):
            return Array(nt, subst_bound(lo, sigma), subst_bound(hi, sigma),
                         subst_type(elem, sigma))
        case Fun(binders, params, ret):
            inner = {k: v for k, v in sigma.items() if k not in binders}
            if not inner:
                return t
            incoming = {b.var for b in inner.values() if b.var is not None}
            clash = [x for x in binders if x in incoming]
            if clash:
                renaming = {x: var_bound(fresh(x)) for x in clash}
                binders = tuple(renaming[x].var if x in renaming else x for x in binders)
                params = tuple(subst_type(p, renaming) for p in params)
                ret = subst_type(ret, renaming)
            return Fun(binders, tuple(subst_type(p, inner) for p in params),
                       subst_type(ret, inner))
    raise TypeError(f"not a type: {t!r}")


def rename_binders(f: Fun, names: Iterable[str]) -> Fun:
    names = tuple(names)
    sigma = {x: var_bound(y) for x, y in zip(f.binders, names)}
    # plain substitution is safe here because the new names are fresh
    params = tuple(_subst_raw(p, sigma) for p in f.params)
    return Fun(names, params, _subst_raw(f.ret, sigma))


def _subst_raw(t, sigma):
    match t:
        case IntType():
            return t
        case Ptr(pointee, mode):
            return Ptr(_subst_raw(pointee, sigma), mode)
        case Array(nt, lo, hi, elem):
            return Array(nt, subst_bound(lo, sigma), subst_bound(hi, sigma),
                         _subst_raw(elem, sigma))
        case Fun(binders, params, ret):
            inner = {k: v for k, v in sigma.items() if k not in binders}
            return Fun(binders, tuple(_subst_raw(p, inner) for p in params),
                       _subst_raw(ret, inner))
    raise TypeError(f"not a type: {t!r}")


def as_bound(e: Expr) -> Optional[Bound]:
    """The Bound an expression denotes syntactically, if it is one."""
    match e:
        case Lit(n, IntType()):
            return lit_bound(n)
        case Var(x):
            return var_bound(x)
        case Add(Var(x), Lit(n, IntType())):
            return var_bound(x, n)
        case Add(Lit(n, IntType()), Var(x)):
            return var_bound(x, n)
        case Add(Lit(a, IntType()), Lit(b, IntType())):
            return lit_bound(a + b)
    return None


def eval_bound(b: Bound, valuation: Mapping[str, int]) -> int:
    return b.offset if b.var is None else valuation[b.var] + b.offset


# ================================================================ parsing


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int, expected: str = ""):
        self.line, self.col, self.expected = line, col, expected
        detail = f" (expected {expected})" if expected else ""
        super().__init__(f"{line}:{col}: {message}{detail}")


@dataclass(slots=True)
class _Atom:
    text: str
    line: int
    col: int


@dataclass(slots=True)
class _List:
    items: list
    line: int
    col: int


_TOKEN = re.compile(r"\s+|;[^\n]*|\(|\)|[^\s();]+")
IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
INTEGER = re.compile(r"-?[0-9]+\Z")


def _read_sexprs(text: str) -> list:
    stack: list[_List] = [_List([], 1, 1)]
    line, line_start = 1, 0
    for m in _TOKEN.finditer(text):
        tok, col = m.group(), m.start() - line_start + 1
        if tok[0].isspace() or tok[0] == ";":
            newlines = tok.count("\n")
            if newlines:
                line += newlines
                line_start = m.start() + tok.rindex("\n") + 1
            continue
        if tok == "(":
            stack.append(_List([], line, col))
        elif tok == ")":
            if len(stack) == 1:
                raise ParseError("unbalanced ')'", line, col)
            done = stack.pop()
            stack[-1].items.append(done)
        else:
            stack[-1].items.append(_Atom(tok, line, col))
    if len(stack) != 1:
        open_ = stack[-1]
        raise ParseError("unclosed '('", open_.line, open_.col, "')'")
    return stack[0].items


def _where(node) -> tuple[int, int]:
    return node.line, node.col


def _fail(node, message: str, expected: str = ""):
    raise ParseError(message, *_where(node), expected)


def _atom(node, expected: str) -> str:
    if not isinstance(node, _Atom):
        _fail(node, "unexpected list", expected)
    return node.text


def _ident(node, pattern=IDENT) -> str:
    text = _atom(node, "identifier")
    if not pattern.match(text):
        _fail(node, f"bad identifier {text!r}", "identifier")
    return text


def _int(node) -> int:
    text = _atom(node, "integer")
    if not INTEGER.match(text):
        _fail(node, f"bad integer {text!r}", "integer")
    n = int(text)
    if not INT64_MIN <= n <= INT64_MAX:
        _fail(node, f"integer {text} outside signed 64-bit range")
    return n


def _mode(node, allowed=(Mode.C, Mode.T, Mode.U)) -> Mode:
    text = _atom(node, "mode")
    for m in allowed:
        if m.value == text:
            return m
    _fail(node, f"bad mode {text!r}", "|".join(m.value for m in allowed))


def _head(node, expected: str) -> tuple[str, list]:
    if not isinstance(node, _List) or not node.items:
        _fail(node, "expected a form", expected)
    return _atom(node.items[0], expected), node.items[1:]


def _arity(node, args, n: int, form: str):
    if len(args) != n:
        _fail(node, f"'{form}' takes {n} arguments, got {len(args)}")


def _bound(node, ident=IDENT) -> Bound:
    if isinstance(node, _Atom):
        return lit_bound(_int(node))
    head, args = _head(node, "bound")
    if head != "+" or len(args) != 2:
        _fail(node, "bad bound", "integer or (+ x N)")
    return var_bound(_ident(args[0], ident), _int(args[1]))


def _type(node, ident=IDENT):
    if isinstance(node, _Atom):
        if node.text == "int":
            return INT
        _fail(node, f"unknown type {node.text!r}", "type")
    head, args = _head(node, "type")
    if head == "ptr":
        _arity(node, args, 2, "ptr")
        return Ptr(_type(args[0], ident), _mode(args[1]))
    if head == "array":
        nt = bool(args) and isinstance(args[0], _Atom) and args[0].text == "nt"
        rest = args[1:] if nt else args
        _arity(node, rest, 2, "array")
        if not isinstance(rest[0], _List) or len(rest[0].items) != 2:
            _fail(rest[0], "bad array bounds", "(LB UB)")
        lo, hi = (_bound(b, ident) for b in rest[0].items)
        return Array(nt, lo, hi, _type(rest[1], ident))
    if head == "fun":
        _arity(node, args, 3, "fun")
        if not isinstance(args[0], _List) or not isinstance(args[1], _List):
            _fail(node, "bad fun type", "(fun (x...) (TYPE...) TYPE)")
        binders = tuple(_ident(x, ident) for x in args[0].items)
        params = tuple(_type(t, ident) for t in args[1].items)
        return Fun(binders, params, _type(args[2], ident))
    _fail(node, f"unknown type form {head!r}", "int|ptr|array|fun")


def _word_type(node, ident=IDENT):
    t = _type(node, ident)
    if not isinstance(t, (IntType, Ptr)):
        _fail(node, "expected a word type", "int or (ptr ...)")
    return t


def _var_list(node) -> tuple[str, ...]:
    if not isinstance(node, _List):
        _fail(node, "expected a variable list", "(x ...)")
    return tuple(_ident(x) for x in node.items)


def _saved(node) -> Optional[Lit]:
    if isinstance(node, _Atom) and node.text == "undef":
        return None
    e = _expr(node, True)
    if not isinstance(e, Lit):
        _fail(node, "ret must save a literal", "(lit N TYPE) or undef")
    return e


def _expr(node, allow_ret: bool) -> Expr:
    head, args = _head(node, "expression")
    match head:
        case "lit":
            _arity(node, args, 2, head)
            return Lit(_int(args[0]), _word_type(args[1]))
        case "var":
            _arity(node, args, 1, head)
            return Var(_ident(args[0]))
        case "add":
            _arity(node, args, 2, head)
            return Add(_expr(args[0], allow_ret), _expr(args[1], allow_ret))
        case "cast" | "dyncast":
            _arity(node, args, 2, head)
            cls = Cast if head == "cast" else DynCast
            return cls(_word_type(args[0]), _expr(args[1], allow_ret))
        case "strlen":
            _arity(node, args, 1, head)
            return Strlen(_ident(args[0]))
        case "malloc":
            _arity(node, args, 2, head)
            ty = _type(args[1])
            if isinstance(ty, Fun):
                _fail(args[1], "malloc of a function type", "object type")
            return Malloc(_mode(args[0]), ty)
        case "deref":
            _arity(node, args, 1, head)
            return Deref(_expr(args[0], allow_ret))
        case "assign":
            _arity(node, args, 2, head)
            return Assign(_expr(args[0], allow_ret), _expr(args[1], allow_ret))
        case "let":
            _arity(node, args, 3, head)
            return Let(_ident(args[0]), _expr(args[1], allow_ret), _expr(args[2], allow_ret))
        case "if":
            _arity(node, args, 3, head)
            return If(*(_expr(a, allow_ret) for a in args))
        case "call":
            if not args:
                _fail(node, "'call' needs a callee")
            return Call(_expr(args[0], allow_ret), tuple(_expr(a, allow_ret) for a in args[1:]))
        case "unchecked" | "checked":
            _arity(node, args, 2, head)
            cls = Unchecked if head == "unchecked" else Checked
            return cls(_var_list(args[0]), _expr(args[1], allow_ret))
        case "ret":
            if not allow_ret:
                _fail(node, "'ret' is introduced by evaluation and cannot appear in programs")
            _arity(node, args, 3, head)
            return Ret(_ident(args[0]), _saved(args[1]), _expr(args[2], allow_ret))
    _fail(node, f"unknown expression form {head!r}", "expression")


def parse_expr(text: str, allow_ret: bool = False) -> Expr:
    forms = _read_sexprs(text)
    if len(forms) != 1:
        raise ParseError(f"expected one expression, found {len(forms)}", 1, 1)
    return _expr(forms[0], allow_ret)


def parse_type(text: str):
    forms = _read_sexprs(text)
    if len(forms) != 1:
        raise ParseError("expected one type", 1, 1)
    return _type(forms[0])


def _fundef(node, args) -> FunEntry:
    fields: dict[str, list] = {}
    for item in args:
        key, rest = _head(item, "fundef field")
        if key in fields:
            _fail(item, f"duplicate field {key!r}")
        fields[key] = rest
        fields[key + "@"] = item
    for key in ("addr", "region", "mode", "ret", "params", "body"):
        if key not in fields:
            _fail(node, f"fundef is missing ({key} ...)")
    unknown = set(k for k in fields if not k.endswith("@")) - {"addr", "region", "mode", "ret", "params", "body"}
    if unknown:
        _fail(node, f"unknown fundef field {sorted(unknown)[0]!r}")
    addr = _int(fields["addr"][0])
    if addr <= 0:
        _fail(fields["addr@"], "function address must be positive")
    region = _mode(fields["region"][0], CONTEXT_MODES)
    params = []
    for p in fields["params"]:
        if not isinstance(p, _List) or len(p.items) != 2:
            _fail(p, "bad parameter", "(x TYPE)")
        params.append((_ident(p.items[0]), _word_type(p.items[1])))
    fd = FunDef(_word_type(fields["ret"][0]), tuple(params),
                _mode(fields["mode"][0]), _expr(fields["body"][0], False))
    return FunEntry(addr, region, fd)


def _heap(args) -> list[HeapEntry]:
    entries = []
    for block in args:
        region_name, cells = _head(block, "heap region")
        region = _mode(block.items[0], CONTEXT_MODES)
        for cell in cells:
            if not isinstance(cell, _List) or len(cell.items) != 2:
                _fail(cell, "bad heap cell", "(ADDR (lit N TYPE))")
            addr = _int(cell.items[0])
            if addr <= 0:
                _fail(cell, "heap address must be positive")
            value = _expr(cell.items[1], False)
            if not isinstance(value, Lit):
                _fail(cell.items[1], "heap cells hold literals", "(lit N TYPE)")
            entries.append(HeapEntry(region, addr, value))
    return entries


def parse_program(text: str) -> Program:
    funs, heap, main = [], [], None
    for form in _read_sexprs(text):
        head, args = _head(form, "fundef|heap|main")
        if head == "fundef":
            funs.append(_fundef(form, args))
        elif head == "heap":
            heap.extend(_heap(args))
        elif head == "main":
            if main is not None:
                _fail(form, "duplicate main")
            _arity(form, args, 1, "main")
            main = _expr(args[0], False)
        else:
            _fail(form, f"unknown top-level form {head!r}", "fundef|heap|main")
    if main is None:
        raise ParseError("program has no (main ...)", 1, 1, "(main EXPR)")
    seen = set()
    for f in funs:
        if (f.region, f.addr) in seen:
            raise ParseError(f"duplicate function at {f.region.value}:{f.addr}", 1, 1)
        seen.add((f.region, f.addr))
    seen = set()
    for h in heap:
        if (h.region, h.addr) in seen:
            raise ParseError(f"duplicate heap cell at {h.region.value}:{h.addr}", 1, 1)
        seen.add((h.region, h.addr))
    return Program(tuple(funs), tuple(heap), main)


# =============================================================== printing


def print_bound(b: Bound) -> str:
    return str(b.offset) if b.var is None else f"(+ {b.var} {b.offset})"


def print_type(t) -> str:
    match t:
        case IntType():
            return "int"
        case Ptr(pointee, mode):
            return f"(ptr {print_type(pointee)} {mode.value})"
        case Array(nt, lo, hi, elem):
            flag = "nt " if nt else ""
            return f"(array {flag}({print_bound(lo)} {print_bound(hi)}) {print_type(elem)})"
        case Fun(binders, params, ret):
            ps = " ".join(print_type(p) for p in params)
            return f"(fun ({' '.join(binders)}) ({ps}) {print_type(ret)})"
    raise TypeError(f"not a type: {t!r}")


def print_expr(e: Expr) -> str:
    match e:
        case Lit(n, t):
            return f"(lit {n} {print_type(t)})"
        case Var(x):
            return f"(var {x})"
        case Add(a, b):
            return f"(add {print_expr(a)} {print_expr(b)})"
        case Cast(t, body):
            return f"(cast {print_type(t)} {print_expr(body)})"
        case DynCast(t, body):
            return f"(dyncast {print_type(t)} {print_expr(body)})"
        case Ret(x, saved, body):
            s = "undef" if saved is None else print_expr(saved)
            return f"(ret {x} {s} {print_expr(body)})"
        case Strlen(x):
            return f"(strlen {x})"
        case Malloc(mode, t):
            return f"(malloc {mode.value} {print_type(t)})"
        case Deref(body):
            return f"(deref {print_expr(body)})"
        case Assign(a, b):
            return f"(assign {print_expr(a)} {print_expr(b)})"
        case Let(x, bound, body):
            return f"(let {x} {print_expr(bound)} {print_expr(body)})"
        case If(c, t, f):
            return f"(if {print_expr(c)} {print_expr(t)} {print_expr(f)})"
        case Call(fn, args):
            return "(call " + " ".join(print_expr(x) for x in (fn, *args)) + ")"
        case Unchecked(vs, body):
            return f"(unchecked ({' '.join(vs)}) {print_expr(body)})"
        case Checked(vs, body):
            return f"(checked ({' '.join(vs)}) {print_expr(body)})"
    raise TypeError(f"not an expression: {e!r}")


def print_program(p: Program) -> str:
    out = []
    for f in p.funs:
        d = f.fundef
        params = " ".join(f"({x} {print_type(t)})" for x, t in d.params)
        out.append(f"(fundef (addr {f.addr}) (region {f.region.value}) (mode {d.mode.value})"
                   f" (ret {print_type(d.ret)}) (params {params})\n  (body {print_expr(d.body)}))")
    if p.heap:
        blocks = []
        for region in CONTEXT_MODES:
            cells = [h for h in p.heap if h.region == region]
            if cells:
                inner = " ".join(f"({h.addr} {print_expr(h.value)})" for h in cells)
                blocks.append(f"({region.value} {inner})")
        out.append("(heap " + " ".join(blocks) + ")")
    out.append(f"(main {print_expr(p.main)})")
    return "\n".join(out) + "\n"
