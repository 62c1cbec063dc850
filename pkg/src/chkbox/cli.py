"""Command-line front end: typecheck, run, compile, runc, fuzz."""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path
from typing import Optional

from .compiler import compile_program
from .corec import eval_corec, parse_cprogram, print_cprogram
from .machine import FaultPolicy, OutcomeKind, eval_program, trace_records
from .propcheck import PROPERTIES, GenConfig, run_checks
from .syntax import ParseError, parse_program, print_type
from .typecheck import TypeCheckError, check_program

EXIT_OK, EXIT_INPUT, EXIT_PROPERTY, EXIT_INTERNAL = 0, 1, 2, 3


class _Out:
    def __init__(self, stream=None):
        self.stream = stream or sys.stdout
        isatty = getattr(self.stream, "isatty", lambda: False)()
        self.color = isatty and os.environ.get("CHKBOX_COLOR", "1") != "0"

    def paint(self, text: str, code: str) -> str:
        return f"\033[{code}m{text}\033[0m" if self.color else text

    def good(self, text: str) -> str:
        return self.paint(text, "32")

    def bad(self, text: str) -> str:
        return self.paint(text, "31")

    def print(self, text: str = "") -> None:
        print(text, file=self.stream)


def _load(path: str):
    return parse_program(Path(path).read_text(encoding="utf-8"))


def _type_error(out: _Out, err: TypeCheckError) -> int:
    path = "/".join(map(str, err.path)) or "root"
    out.print(out.bad(f"error: {err.rule} at {path}: {err.message}"))
    return EXIT_INPUT


def cmd_typecheck(args, out: _Out) -> int:
    p = _load(args.file)
    try:
        t = check_program(p)
    except TypeCheckError as err:
        return _type_error(out, err)
    out.print(out.good(f"ok: {print_type(t)}"))
    return EXIT_OK


def cmd_run(args, out: _Out) -> int:
    p = _load(args.file)
    try:
        check_program(p)
    except TypeCheckError as err:
        return _type_error(out, err)
    policy = FaultPolicy(args.crash_rate, args.fault_seed)
    outcome = eval_program(p, args.fuel, policy, keep_trace=args.trace)
    if args.trace:
        for record in trace_records(outcome.trace):
            out.print(json.dumps(record))
    if outcome.kind is OutcomeKind.STUCK:
        out.print(out.bad(f"stuck: {outcome.stuck}"))
        return EXIT_PROPERTY
    out.print(outcome.describe())
    return EXIT_OK


def cmd_compile(args, out: _Out) -> int:
    p = _load(args.file)
    try:
        text = print_cprogram(compile_program(p)) + "\n"
    except TypeCheckError as err:
        return _type_error(out, err)
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        out.stream.write(text)
    return EXIT_OK


def cmd_runc(args, out: _Out) -> int:
    prog = parse_cprogram(Path(args.file).read_text(encoding="utf-8"))
    outcome = eval_corec(prog, args.fuel)
    if outcome.kind == "stuck":
        out.print(out.bad(f"stuck: {outcome.message}"))
        return EXIT_PROPERTY
    out.print(outcome.describe())
    return EXIT_OK


def cmd_fuzz(args, out: _Out) -> int:
    props = PROPERTIES if args.check == "all" else (args.check,)
    cfg = GenConfig(seed=args.seed, max_depth=args.max_depth, count=args.count,
                    fault_seed=args.fault_seed)
    start = time.perf_counter()
    reports = run_checks(props, cfg, fuel=args.fuel, join_budget=args.join_budget)
    elapsed = time.perf_counter() - start
    failed = False
    for r in reports.values():
        status = out.good("PASS") if r.passed else out.bad("FAIL")
        line = f"{status} {r.property}: {r.cases} cases, {len(r.failures)} failures"
        if r.property == "simulation":
            line += f", {len(r.inconclusive)} join budget exhaustions over {r.pairs} steps"
        out.print(line)
        failed = failed or not r.passed
    print(f"wall time {elapsed:.2f}s", file=sys.stderr)
    if args.report:
        doc = {"config": {"count": args.count, "max_depth": args.max_depth, "seed": args.seed,
                          "fault_seed": args.fault_seed, "fuel": args.fuel,
                          "join_budget": args.join_budget, "check": args.check},
               "passed": not failed,
               "properties": [r.to_dict() for r in reports.values()]}
        Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")
    return EXIT_PROPERTY if failed else EXIT_OK


def _rate(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("crash rate must lie in [0, 1]")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _count(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must not be negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chkbox", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("typecheck", help="print the type of main or the first type error")
    p.add_argument("file")
    p.set_defaults(func=cmd_typecheck)

    p = sub.add_parser("run", help="evaluate a program on the source machine")
    p.add_argument("file")
    p.add_argument("--fuel", type=_positive, default=10_000)
    p.add_argument("--crash-rate", type=_rate, default=0.0,
                   help="probability of the crash rule per unchecked step")
    p.add_argument("--fault-seed", type=int, default=0)
    p.add_argument("--trace", action="store_true", help="print one JSON record per step")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compile", help="lower a program to CoreC")
    p.add_argument("file")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("runc", help="evaluate a CoreC program")
    p.add_argument("file")
    p.add_argument("--fuel", type=_positive, default=10_000)
    p.set_defaults(func=cmd_runc)

    p = sub.add_parser("fuzz", help="run the randomized property checks")
    p.add_argument("--count", type=_count, default=100)
    p.add_argument("--max-depth", type=_positive, default=8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fault-seed", type=int, default=0)
    p.add_argument("--check", choices=(*PROPERTIES, "all"), default="all")
    p.add_argument("--fuel", type=_positive, default=10_000)
    p.add_argument("--join-budget", type=_positive, default=256)
    p.add_argument("--report", help="write the JSON report here")
    p.set_defaults(func=cmd_fuzz)
    return ap


def main(argv: Optional[list] = None, stream=None) -> int:
    args = build_parser().parse_args(argv)
    out = _Out(stream)
    try:
        return args.func(args, out)
    except ParseError as err:
        out.print(out.bad(f"parse error: {err}"))
        return EXIT_INPUT
    except OSError as err:
        out.print(out.bad(f"error: {err}"))
        return EXIT_INPUT
    except Exception as err:  # noqa: BLE001 - reported as the internal-error exit code
        out.print(out.bad(f"internal error: {type(err).__name__}: {err}"))
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
