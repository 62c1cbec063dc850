"""Randomized metatheory checks, and how they catch a broken machine.

First every property runs on a small generated corpus and passes. Then the
addition rule is sabotaged to return n+1, and the simulation check reports
a counterexample that replays from its seed and index.

Run with: python3 demos/property_checks.py
"""

from dataclasses import replace

from chkbox import machine
from chkbox.machine import StepResult
from chkbox.propcheck import PROPERTIES, GenConfig, check_simulation, generate_program, run_checks
from chkbox.syntax import Lit


def off_by_one(real):
    def step(stack, heap, funs, redex):
        r = real(stack, heap, funs, redex)
        if r is not None and r.rule == "S-Add":
            return StepResult(r.stack, r.heap, Lit(r.result.n + 1, r.result.ty), r.rule)
        return r
    return step


def main() -> None:
    cfg = GenConfig(seed=1, count=100)
    for name, report in run_checks(PROPERTIES, cfg).items():
        print(f"{'PASS' if report.passed else 'FAIL'} {name}: {report.cases} cases")

    real = machine.compute_step
    machine.compute_step = off_by_one(real)
    try:
        small = replace(cfg, max_depth=3)
        failures = run_checks(["simulation"], small)["simulation"].failures
        print(f"\nbroken S-Add: {len(failures)} simulation failures")
        first = failures[0]
        print(f"  seed {first['seed']} index {first['index']}: {first['message']}")
        print(f"  program: {first['program']}")
        again = generate_program(replace(small, seed=first["seed"], unchecked=first["unchecked"]),
                                 first["index"])
        print("  replayed verdict:", check_simulation(again).message)
    finally:
        machine.compute_step = real


if __name__ == "__main__":
    main()
