"""Executable workbench for a mode-indexed safe-C calculus.

Type checker, small-step machine over a two-region heap, compiler to the
untyped CoreC target, CoreC interpreter, and randomized metatheory checks.
"""

from .syntax import Mode, parse_expr, parse_program, parse_type, print_expr, print_program, print_type
from .typecheck import TypeCheckError, check_program, typecheck
from .machine import FaultPolicy, eval_program
from .compiler import anf, compile_program, flagtable
from .corec import eval_corec, parse_cprogram, print_cprogram

__all__ = [
    "Mode", "parse_expr", "parse_program", "parse_type", "print_expr", "print_program",
    "print_type", "TypeCheckError", "check_program", "typecheck", "FaultPolicy",
    "eval_program", "anf", "compile_program", "flagtable", "eval_corec",
    "parse_cprogram", "print_cprogram",
]
