"""Unchecked code may misbehave arbitrarily; checked memory stays intact.

The crash rule lets any unchecked step replace its redex with a zero of the
right type. This demo runs the same program at several crash rates and shows
that the run never gets stuck and the checked heap cell is never written.

Run with: python3 demos/fault_injection.py
"""

from chkbox import FaultPolicy, Mode, eval_program, parse_program
from chkbox.machine import StepKind

PROGRAM = """
(heap (c (1 (lit 5 int)) (2 (lit 0 int))) (u (1 (lit 7 int)) (2 (lit 0 int))))
(main
  (let q (lit 1 (ptr (array (0 1) int) t))
    (let w (unchecked (q) (assign (var q) (add (deref (var q)) (lit 2 int))))
      (add (deref (lit 1 (ptr int c))) (deref (var q))))))
"""


def main() -> None:
    p = parse_program(PROGRAM)
    print(f"{'rate':>5} {'seed':>5}  {'faults':>6}  {'checked cell':>12}  result")
    for rate in (0.0, 0.5, 1.0):
        for seed in range(3):
            out = eval_program(p, policy=FaultPolicy(rate, seed))
            faults = sum(s.kind is StepKind.FAULT for s in out.trace)
            cell = out.final.heap.get(Mode.C, 1).n
            print(f"{rate:>5} {seed:>5}  {faults:>6}  {cell:>12}  {out.describe()}")


if __name__ == "__main__":
    main()
