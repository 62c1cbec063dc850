"""Typecheck, run, compile and rerun one program that crosses the checked/unchecked boundary.

Run with: python3 demos/sandbox_walkthrough.py
"""

from chkbox import (TypeCheckError, check_program, compile_program, eval_corec, eval_program,
                    parse_program, print_cprogram, print_type)
from chkbox.machine import trace_records

# checked code hands a tainted buffer to an unchecked block, which writes through it
SANDBOX = """
(heap (c (1 (lit 5 int)) (2 (lit 0 int))) (u (1 (lit 7 int)) (2 (lit 0 int))))
(main
  (let q (lit 1 (ptr (array (0 1) int) t))
    (let w (unchecked (q) (assign (var q) (lit 9 int)))
      (add (deref (lit 1 (ptr int c))) (deref (var q))))))
"""

# unchecked code may not dereference a checked pointer
LEAK = """
(heap (c (1 (lit 5 int))))
(main (let p (lit 1 (ptr int c)) (unchecked (p) (deref (var p)))))
"""


def main() -> None:
    p = parse_program(SANDBOX)
    print("type of main:", print_type(check_program(p)))

    out = eval_program(p)
    print("\nsource machine trace:")
    for rec in trace_records(out.trace):
        print(f"  {rec['step']:2}  {rec['mode']}  {rec['rule']:<14} {rec['redex']}")
    print("result:", out.describe())

    target = compile_program(p)
    print("\ncompiled CoreC:")
    print(print_cprogram(target))
    res = eval_corec(target)
    print("CoreC result:", res.kind, res.value)

    print("\nrejected program:")
    try:
        check_program(parse_program(LEAK))
    except TypeCheckError as err:
        print(" ", err)


if __name__ == "__main__":
    main()
