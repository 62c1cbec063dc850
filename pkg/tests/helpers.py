"""Shared helpers: build configurations and stores from concrete syntax."""

from __future__ import annotations

from pathlib import Path

from chkbox.machine import Config
from chkbox.store import FunStore, Heap
from chkbox.syntax import parse_expr, parse_program, parse_type

FIXTURES = Path(__file__).parent / "fixtures"

# Default stores for one-step goldens: two cells per region, each object
# null-terminated, and one function of each mode.
STORE_TEXT = """
(fundef (addr 1) (region c) (mode c) (ret int) (params (a int)) (body (add (var a) (lit 1 int))))
(fundef (addr 1) (region u) (mode t) (ret int) (params (a int)) (body (add (var a) (lit 2 int))))
(fundef (addr 2) (region u) (mode u) (ret int) (params (a int)) (body (add (var a) (lit 3 int))))
(heap (c (1 (lit 5 int)) (2 (lit 0 int)))
      (u (1 (lit 7 int)) (2 (lit 0 int))))
(main (lit 0 int))
"""


def stores(text: str = STORE_TEXT) -> tuple[Heap, FunStore]:
    p = parse_program(text)
    return Heap.from_program(p), FunStore.from_program(p)


def expr(text: str):
    return parse_expr(text, allow_ret=True)


def ty(text: str):
    return parse_type(text)


def stack(**bindings: str) -> dict:
    return {x: expr(v) for x, v in bindings.items()}


def config(e: str, store_text: str = STORE_TEXT, **bindings: str) -> tuple[Config, FunStore]:
    heap, funs = stores(store_text)
    return Config(stack(**bindings), heap, expr(e)), funs
