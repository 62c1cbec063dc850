"""Two-region heap and function store shared by the machine and the checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional

from .syntax import FunDef, Lit, Mode, Program

REGIONS = (Mode.C, Mode.U)


def region_of(mode: Mode) -> Mode:
    """Checked pointers live in region C; tainted and unchecked ones in U."""
    return Mode.C if mode is Mode.C else Mode.U


@dataclass(frozen=True)
class Heap:
    """Immutable heap: updates return a new Heap sharing nothing mutable."""

    cells: dict = field(default_factory=dict)  # (region, addr) -> Lit
    next_free: tuple = (1, 1)  # high-water marks for C and U

    def get(self, region: Mode, addr: int) -> Optional[Lit]:
        return self.cells.get((region, addr))

    def defined(self, region: Mode, addr: int) -> bool:
        return (region, addr) in self.cells

    def write(self, region: Mode, addr: int, value: Lit) -> "Heap":
        cells = dict(self.cells)
        cells[(region, addr)] = value
        return Heap(cells, self.next_free)

    def alloc(self, region: Mode, values: list[Lit]) -> tuple[int, "Heap"]:
        slot = 0 if region is Mode.C else 1
        base = self.next_free[slot]
        cells = dict(self.cells)
        for i, v in enumerate(values):
            cells[(region, base + i)] = v
        marks = list(self.next_free)
        marks[slot] = base + max(len(values), 1)
        return base, Heap(cells, tuple(marks))

    def region_items(self, region: Mode) -> Iterator[tuple[int, Lit]]:
        for (r, a), v in sorted(self.cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1])):
            if r is region:
                yield a, v

    @staticmethod
    def from_program(p: Program) -> "Heap":
        cells = {(h.region, h.addr): h.value for h in p.heap}
        marks = []
        for region in REGIONS:
            used = [a for (r, a) in cells if r is region]
            marks.append(max(used, default=0) + 1)
        return Heap(cells, tuple(marks))


@dataclass(frozen=True)
class FunStore:
    defs: dict = field(default_factory=dict)  # (region, addr) -> FunDef

    def get(self, region: Mode, addr: int) -> Optional[FunDef]:
        return self.defs.get((region, addr))

    @staticmethod
    def from_program(p: Program) -> "FunStore":
        return FunStore({(f.region, f.addr): f.fundef for f in p.funs})
