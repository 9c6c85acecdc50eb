import json
import subprocess
import sys

import pytest

from kahlerhelm.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, EXIT_PARSE, RunConfig, main


def run(*argv):
    return main([str(a) for a in argv])


def test_decompose_builtin_writes_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    assert run("decompose", "--builtin", "gauss-1form", "--res", 32, "--out", out) == EXIT_OK
    man = json.loads((out / "manifest.json").read_text())
    assert man["method"] == "1form"
    assert man["grid"]["res"] == [32, 32, 32]
    assert {"residual_1.csv", "residual_1.bin"} <= set(man["files"]["residual"])
    for f in man["files"]["residual"]:
        assert (out / f).exists()
    assert "residual: L2 rel" in capsys.readouterr().out


def test_identical_runs_give_identical_manifests(tmp_path):
    for name in ("a", "b"):
        assert run("decompose", "--builtin", "gauss-2form", "--res", 16, "--out", tmp_path / name, "--threads", 1) == EXIT_OK
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    assert (tmp_path / "a" / "exact_12.bin").read_bytes() == (tmp_path / "b" / "exact_12.bin").read_bytes()


def test_config_round_trip(tmp_path):
    first = tmp_path / "first"
    assert run("decompose", "--builtin", "coexact-dw", "--box", "-5,5", "--res", 16, "--out", first, "--formats", "bin") == EXIT_OK
    cfg = json.loads((first / "config.json").read_text())
    assert cfg["box"] == [-5.0, 5.0] and cfg["formats"] == ["bin"]
    again = tmp_path / "again"
    assert run("decompose", "--config", first / "config.json", "--out", again) == EXIT_OK
    assert (first / "manifest.json").read_bytes() == (again / "manifest.json").read_bytes()
    back = RunConfig.from_dict(json.loads((again / "config.json").read_text()))
    assert back.res == (16,) and back.builtin == "coexact-dw"


def test_zero_field(tmp_path):
    f = tmp_path / "zero.txt"
    f.write_text("dim 3\n# nothing here\n")
    assert run("decompose", "--field", f, "--res", 8, "--out", tmp_path / "o") == EXIT_OK
    norms = json.loads((tmp_path / "o" / "manifest.json").read_text())["norms"]
    assert norms["exact_l2"] == norms["coexact_l2"] == norms["residual_l2"] == 0.0


def test_field_file(tmp_path):
    f = tmp_path / "beta.txt"
    f.write_text("dim 3\n1,2 : exp(-x1^2 - x2^2 - x3^2)\n")
    assert run("decompose", "--field", f, "--res", 16, "--out", tmp_path / "o") == EXIT_OK
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["method"] == "2form" and man["grade"] == 2


def test_malformed_file_exit_code_and_line(tmp_path, capsys):
    f = tmp_path / "bad.txt"
    f.write_text("dim 3\n1 : exp(-x1^2)\n2 : x1 +* 3\n")
    assert run("decompose", "--field", f, "--res", 8, "--out", tmp_path / "o") == EXIT_PARSE
    err = capsys.readouterr().err
    assert "bad.txt" in err and "line 3" in err


def test_grade_and_dimension_mismatch(tmp_path, capsys):
    f = tmp_path / "two.txt"
    f.write_text("dim 3\n1,2 : exp(-x1^2 - x2^2 - x3^2)\n")
    assert run("decompose", "--field", f, "--grade", 1, "--res", 8, "--out", tmp_path / "o") == EXIT_INPUT
    assert run("decompose", "--field", f, "--dim", 4, "--res", 8, "--out", tmp_path / "o") != EXIT_OK
    assert run("decompose", "--builtin", "nope", "--out", tmp_path / "o") == EXIT_INPUT
    assert run("decompose", "--builtin", "gauss-1form", "--res", 1, "--out", tmp_path / "o") == EXIT_INPUT
    assert run("decompose", "--builtin", "gauss-1form", "--box", "3,3", "--out", tmp_path / "o") == EXIT_INPUT


def test_usage_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        run("decompose", "--path", "gpu")
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        run("decompose", "--builtin", "gauss-1form", "--field", "x.txt")
    assert info.value.code == 2


def test_calibrate_then_decompose(tmp_path, capsys):
    consts = tmp_path / "c2.json"
    assert run("calibrate", "--dim", 2, "--out", tmp_path / "cal", "--constants", consts) == EXIT_OK
    text = capsys.readouterr().out
    assert "kernel log" in text and "mu_d" in text
    fmt = json.loads(consts.read_text())["format"]
    assert fmt["n"] == 2 and fmt["kind"] == "log"
    assert run("decompose", "--builtin", "gauss-1form", "--dim", 2, "--box", "-7,7", "--res", 112,
               "--constants", consts, "--out", tmp_path / "d2") == EXIT_OK
    man = json.loads((tmp_path / "d2" / "manifest.json").read_text())
    assert man["method"] == "general" and man["norms"]["l2_rel"] < 0.02


def test_calibrate_failure_is_nonzero(tmp_path, capsys):
    assert run("calibrate", "--dim", 3, "--box", "-2,2", "--res", 6, "--out", tmp_path / "c") == EXIT_FAIL
    err = capsys.readouterr().err
    assert "truncation-dominated" in err
    assert not (tmp_path / "c" / "constants.json").exists()


def test_verify_small(tmp_path, capsys):
    assert run("verify", "--trials", 5, "--out", tmp_path / "v") == EXIT_OK
    text = capsys.readouterr().out
    assert "codiff_via_dual_e3" in text and "(monotone)" in text
    rep = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert rep["symbolic"]["all_ok"] and len(rep["greens"]["levels"]) == 4


def test_bench_small(tmp_path, capsys):
    assert run("bench", "--res", "8,12", "--full-direct-max", 8, "--out", tmp_path / "b", "--threads", 1) == EXIT_OK
    rep = json.loads((tmp_path / "b" / "bench.json").read_text())
    rows = rep["rows"]
    assert [r["res"] for r in rows] == [8, 12]
    assert rows[1]["direct_extrapolated"]
    for r in rows:
        assert r["rel_l2_diff"] < 1e-8
        assert r["fft_nodes_per_sec"] > 0 and r["direct_seconds_per_eval_point"] > 0
    assert "nodes" in capsys.readouterr().out


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "kahlerhelm", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "decompose" in proc.stdout and "calibrate" in proc.stdout
