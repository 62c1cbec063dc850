import io
import json
import shutil
import subprocess
import sys

import pytest

from chkbox import cli, machine
from chkbox.machine import StepResult
from chkbox.syntax import Lit

from .helpers import FIXTURES


def _run(*argv):
    out = io.StringIO()
    code = cli.main([str(a) for a in argv], out)
    return code, out.getvalue()


def _fx(name):
    return FIXTURES / name


def test_typecheck_ok():
    assert _run("typecheck", _fx("value.chk")) == (0, "ok: int\n")


def test_typecheck_uc_deref_rejected_by_t_def():
    code, text = _run("typecheck", _fx("uc_deref.chk"))
    assert code == 1 and text.startswith("error: T-Def at 1/0:")


def test_typecheck_checked_block_rejected():
    code, text = _run("typecheck", _fx("checked_block.chk"))
    assert code == 1 and text.startswith("error: T-Checked")


def test_parse_error_exit_code(tmp_path):
    bad = tmp_path / "bad.chk"
    bad.write_text("(main (frob))", encoding="utf-8")
    code, text = _run("typecheck", bad)
    assert code == 1 and text.startswith("parse error:")


def test_missing_file_exit_code(tmp_path):
    assert _run("typecheck", tmp_path / "absent.chk")[0] == 1


def test_run_value():
    assert _run("run", _fx("value.chk")) == (0, "value 3 : int\n")


def test_run_null():
    assert _run("run", _fx("null_deref.chk")) == (0, "null\n")


def test_run_out_of_fuel():
    assert _run("run", "--fuel", 1, _fx("long.chk")) == (0, "out-of-fuel\n")


def test_run_type_error_exit_code():
    assert _run("run", _fx("uc_deref.chk"))[0] == 1


def test_run_trace_is_json_lines():
    code, text = _run("run", "--trace", _fx("value.chk"))
    lines = text.splitlines()
    assert code == 0 and lines[-1] == "value 3 : int"
    assert json.loads(lines[0]) == {"step": 0, "mode": "c", "rule": "S-Add", "kind": "rule",
                                    "redex": "(add (lit 1 int) (lit 2 int))"}


def test_run_with_crash_rate_is_reproducible():
    args = ("run", "--trace", "--crash-rate", 0.5, "--fault-seed", 7, _fx("sandbox.chk"))
    assert _run(*args) == _run(*args)


def test_run_rejects_bad_crash_rate():
    with pytest.raises(SystemExit):
        _run("run", "--crash-rate", 2, _fx("value.chk"))


def test_run_stuck_exit_code(monkeypatch):
    real = machine.compute_step
    monkeypatch.setattr(machine, "compute_step",
                        lambda st, h, f, r: None if type(r).__name__ == "Add" else real(st, h, f, r))
    code, text = _run("run", _fx("value.chk"))
    assert code == 2 and text.startswith("stuck:")


def test_compile_matches_golden(tmp_path):
    out = tmp_path / "out.corec"
    assert _run("compile", _fx("deref_array.chk"), "-o", out) == (0, "")
    assert out.read_text(encoding="utf-8") == _fx("deref_array.corec").read_text(encoding="utf-8")


def test_compile_to_stdout():
    code, text = _run("compile", _fx("deref_array.chk"))
    assert code == 0 and text == _fx("deref_array.corec").read_text(encoding="utf-8")


def test_compile_type_error_exit_code():
    assert _run("compile", _fx("uc_deref.chk"))[0] == 1


def test_runc_compiled_value(tmp_path):
    out = tmp_path / "value.corec"
    _run("compile", _fx("value.chk"), "-o", out)
    assert _run("runc", out) == (0, "value 3\n")


def test_runc_tampered_arity_is_stuck(tmp_path):
    text = _fx("deref_array.corec").read_text(encoding="utf-8")
    bad = tmp_path / "bad.corec"
    bad.write_text(text.replace("(lit 1) (lit 1) (lit 1) (lit 1))", "(lit 1) (lit 1) (lit 1))"),
                   encoding="utf-8")
    code, out = _run("runc", bad)
    assert code == 2 and out.startswith("stuck:")


def test_fuzz_all_passes(tmp_path):
    report = tmp_path / "r.json"
    code, text = _run("fuzz", "--count", 20, "--check", "all", "--report", report)
    assert code == 0 and text.count("PASS") == 6
    doc = json.loads(report.read_text(encoding="utf-8"))
    assert doc["passed"] and [p["property"] for p in doc["properties"]] == list(cli.PROPERTIES)


def test_fuzz_zero_count_is_empty_pass(tmp_path):
    report = tmp_path / "r.json"
    assert _run("fuzz", "--count", 0, "--report", report)[0] == 0
    doc = json.loads(report.read_text(encoding="utf-8"))
    assert doc["passed"] and all(p["cases"] == 0 and not p["failures"] for p in doc["properties"])


def test_fuzz_reports_are_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    args = ("fuzz", "--count", 15, "--seed", 3, "--fault-seed", 11, "--report")
    _run(*args, a)
    _run(*args, b)
    assert a.read_bytes() == b.read_bytes()


def test_fuzz_mutation_build_fails(monkeypatch, tmp_path):
    real = machine.compute_step

    def wrong(stack, heap, funs, redex):
        r = real(stack, heap, funs, redex)
        if r is not None and r.rule == "S-Add":
            return StepResult(r.stack, r.heap, Lit(r.result.n + 1, r.result.ty), r.rule)
        return r

    monkeypatch.setattr(machine, "compute_step", wrong)
    report = tmp_path / "r.json"
    code, text = _run("fuzz", "--count", 30, "--check", "simulation", "--report", report)
    assert code == 2 and "FAIL simulation" in text
    failure = json.loads(report.read_text(encoding="utf-8"))["properties"][0]["failures"][0]
    assert {"seed", "index", "program", "message", "trace"} <= set(failure)


def test_internal_error_exit_code(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(cli, "eval_program", boom)
    code, text = _run("run", _fx("value.chk"))
    assert code == 3 and text.startswith("internal error:")


class _Tty(io.StringIO):
    def isatty(self):
        return True


def test_color_only_on_tty_and_can_be_disabled(monkeypatch):
    monkeypatch.delenv("CHKBOX_COLOR", raising=False)
    tty = _Tty()
    cli.main(["typecheck", str(_fx("value.chk"))], tty)
    assert "\033[" in tty.getvalue()
    monkeypatch.setenv("CHKBOX_COLOR", "0")
    tty = _Tty()
    cli.main(["typecheck", str(_fx("value.chk"))], tty)
    assert "\033[" not in tty.getvalue()
    assert "\033[" not in _run("typecheck", _fx("value.chk"))[1]


@pytest.mark.skipif(shutil.which("chkbox") is None, reason="console script not installed")
def test_console_script():
    r = subprocess.run(["chkbox", "run", str(_fx("value.chk"))], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout == "value 3 : int\n"


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "chkbox.cli", "typecheck", str(_fx("value.chk"))],
                       capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout == "ok: int\n"
