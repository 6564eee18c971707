import json

import pytest

from spekl.cli import EXIT_BUDGET, EXIT_OK, EXIT_UNSAFE, EXIT_USAGE, main


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_run_unsafe_call(capsys):
    code, out = run(capsys, "run", "sigma6", "--sys", "s", "--args", "true", "fn")
    assert code == EXIT_UNSAFE and "Unsafe" in out.out


def test_run_json_is_deterministic(capsys):
    _, a = run(capsys, "run", "sigma6", "--sys", "u", "--args", "0", "--json")
    _, b = run(capsys, "run", "sigma6", "--sys", "u", "--args", "0", "--json")
    assert a.out == b.out
    assert json.loads(a.out)["outcome"] == "Terminated"


def test_run_fuel_exhaustion(capsys):
    code, _ = run(capsys, "--fuel", "3", "run", "sc_leak", "--sys", "sc_leak",
                  "--args", "write_cr4")
    assert code == EXIT_BUDGET


def test_run_trace_emits_json_lines(capsys):
    code, out = run(capsys, "run", "sigma6", "--sys", "s", "--args", "true", "fn",
                    "--trace", "json")
    lines = [json.loads(l) for l in out.out.splitlines() if l.startswith("{")]
    assert lines and set(lines[0]) == {"mode", "pc-digest", "rule-name", "stack-depth"}
    assert lines[-1]["rule-name"] == "call-unsafe"


def test_spec_run_directives(capsys):
    code, out = run(capsys, "spec-run", "sigma6", "--sys", "s", "--args", "false", "0",
                    "--directives", "branch:1:1,jump:2:8", "--layout", "fn=8,nop=10,a=12",
                    "--json")
    rep = json.loads(out.out)
    assert code == EXIT_UNSAFE
    assert rep["observations"] == ["obranch(T)", "ojump(8)"]


def test_attack_matrix_and_transform(capsys):
    code, _ = run(capsys, "attack", "sigma6", "attack-a")
    assert code == EXIT_UNSAFE
    code, _ = run(capsys, "attack", "sigma6", "attack-a", "--transform", "simple")
    assert code == EXIT_OK


def test_transform_output_reparses(capsys, tmp_path):
    out_file = tmp_path / "z.ksl"
    code, _ = run(capsys, "transform", "sigma6", "--pass", "opt", "-o", str(out_file))
    assert code == EXIT_OK and "(fence)" in out_file.read_text()
    code, _ = run(capsys, "check", str(out_file), "--property", "ks")
    assert code == EXIT_UNSAFE


def test_check_properties(capsys):
    code, out = run(capsys, "check", "sc_leak", "--property", "sclni", "--json")
    rep = json.loads(out.out)
    assert code == EXIT_UNSAFE and rep["verdict"] == "Interfering"
    assert len(rep["witness"]["layouts"]) == 2
    assert run(capsys, "check", "empty", "--property", "ks")[0] == EXIT_OK
    assert run(capsys, "check", "sc_leak", "--property", "lni")[0] == EXIT_OK


def test_table1(capsys):
    code, out = run(capsys, "table1", "--json")
    rep = json.loads(out.out)
    text = json.dumps(rep)
    assert code == EXIT_OK and "identity" in text


def test_delta(capsys):
    code, out = run(capsys, "delta", "probe", "--attacker", "fixed-probe", "--trials", "500",
                    "--json")
    rep = json.loads(out.out)
    assert code == EXIT_OK and rep["delta-exact"] == "3/4"


@pytest.mark.parametrize("argv", [["bogus"], ["run", "nonexist.ksl"], [],
                                  ["check", "sigma6"]])
def test_usage_errors(capsys, argv):
    with pytest.raises(SystemExit) as e:
        code = main(argv)
        raise SystemExit(code)
    assert e.value.code == EXIT_USAGE


def test_parse_error_exit(capsys, tmp_path):
    bad = tmp_path / "bad.ksl"
    bad.write_text("(proc f ((skip)")
    with pytest.raises(SystemExit) as e:
        raise SystemExit(main(["run", str(bad)]))
    assert e.value.code == EXIT_USAGE
