import json
import subprocess
import sys

import pytest

from luminescence.cli import OUT_ENV, run


def _run(capsys, *argv):
    code = run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _summary(out):
    lines = out.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


def test_asymptote(capsys):
    code, out, _ = _run(capsys, "asymptote", "--model", "linear.json")
    assert code == 0
    assert _summary(out) == {"x_hat": 0.5, "i0": 1}


def test_validate_file(capsys, tmp_path):
    path = tmp_path / "m.json"
    path.write_text(json.dumps({"mu0": 2, "channels": [{"k": 2, "r": 1, "s": 1, "mu": 1}]}))
    code, out, _ = _run(capsys, "validate", "--model", str(path))
    assert code == 0
    assert _summary(out)["channels"] == [[2, 1, 1, 1.0]]


def test_simulate_is_byte_identical(capsys, tmp_path):
    model = tmp_path / "m.json"
    model.write_text(json.dumps({"mu0": 1, "channels": [{"k": 1, "r": 1, "s": 1, "mu": 1}]}))
    for name in ("a", "b"):
        code, _, _ = _run(capsys, "simulate", "--model", str(model), "--n", "100", "--t", "1",
                          "--seed", "7", "--out", str(tmp_path / name))
        assert code == 0
    a = (tmp_path / "a" / "trajectory.csv").read_bytes()
    assert a == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert b"time,channel,m,y_1" in a


def test_rerun_from_header_reproduces(capsys, tmp_path):
    code, _, _ = _run(capsys, "simulate", "--model", "q221", "--n", "60", "--m0", "40", "--t",
                      "0.5", "--seed", "3", "--grid", "11", "--out", str(tmp_path / "a"))
    assert code == 0
    first = tmp_path / "a" / "trajectory.csv"
    header = json.loads(first.read_text().splitlines()[0][2:])
    assert header["config"]["seed"] == 3 and header["config"]["model"]["mu0"] == 1.0
    code, _, _ = _run(capsys, "simulate", "--config", str(first), "--out", str(tmp_path / "b"))
    assert code == 0
    assert first.read_bytes() == (tmp_path / "b" / "trajectory.csv").read_bytes()
    assert (tmp_path / "b" / "scaled.csv").read_text().splitlines()[1] == "t,x0,x_1"


def test_flags_override_config(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"model": "linear", "n": 20, "t": 1.0, "seed": 1}))
    code, out, _ = _run(capsys, "simulate", "--config", str(cfg), "--n", "40",
                        "--out", str(tmp_path))
    assert code == 0
    assert _summary(out)["m0"] == 20   # default round(N x_hat) with N = 40


def test_seed_is_mandatory(capsys, tmp_path):
    code, out, err = _run(capsys, "mc-tail", "--model", "linear", "--n", "10", "--t", "1",
                          "--b", "0.5", "--replicas", "10", "--out", str(tmp_path))
    assert code == 2
    assert "--seed" in err and out == ""


def test_usage_errors(capsys):
    assert _run(capsys, "no-such-command")[0] == 2
    code, _, err = _run(capsys, "simulate", "--model", "linear", "--n", "ten")
    assert code == 2 and "--n" in err
    code, _, err = _run(capsys, "stationary", "--model", "linear")
    assert code == 2 and "--b" in err


def test_domain_error_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"mu0": 1, "channels": [{"k": 2, "r": 1, "s": 3, "mu": 1}]}))
    code, out, _ = _run(capsys, "validate", "--model", str(bad))
    assert code == 1
    assert _summary(out)["error"] == "TripletOrderViolation"
    code, out, _ = _run(capsys, "asymptote", "--model", "/does/not/exist.json")
    assert code == 1 and _summary(out)["error"] == "ModelFileError"


def test_share_convergence_q221(capsys, tmp_path):
    code, out, _ = _run(capsys, "share-convergence", "--model", "q221", "--b-list",
                        "10,100,1000", "--out", str(tmp_path))
    assert code == 0
    rows = (tmp_path / "share_convergence.csv").read_text().splitlines()
    assert rows[1] == "B,x0,error,sigma,kappa_1"
    assert abs(float(rows[-1].split(",")[1]) - 2.0 / 3.0) <= 0.01
    assert _summary(out)["rate_independent"] is True


def test_output_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env"))
    code, _, _ = _run(capsys, "fluid", "--model", "q222", "--t", "2")
    assert code == 0
    assert (tmp_path / "env" / "fluid.csv").read_text().splitlines()[1] == "t,x0,x_1"


def test_hamiltonian_eval(capsys):
    code, out, _ = _run(capsys, "hamiltonian-eval", "--model", "linear", "--x0", "0.5",
                        "--sigma", "0.6931471805599453", "--v", "1", "--v0", "0")
    s = _summary(out)
    assert code == 0 and s["H"] == pytest.approx(0.25)
    assert s["lagrangian"]["value"] > 0


def test_optimal_path_and_stationary(capsys, tmp_path):
    code, out, _ = _run(capsys, "optimal-path", "--model", "linear", "--x0", "0.5", "--b",
                        "1.2", "--t", "1", "--out", str(tmp_path))
    assert code == 0 and _summary(out)["rate"] == pytest.approx(0.61657, abs=2e-4)
    header = (tmp_path / "optimal_path.csv").read_text().splitlines()[1]
    assert header == "t,x0,x_1,sigma,kappa_1,H"
    code, out, _ = _run(capsys, "stationary", "--model", "d2_221_333", "--b", "1e4",
                        "--out", str(tmp_path))
    assert code == 0 and _summary(out)["alpha"][1] >= 0.95
    code, out, _ = _run(capsys, "optimal-path", "--model", "linear", "--x0", "0.5", "--b",
                        "10", "--t", "1", "--out", str(tmp_path))
    assert code == 1 and _summary(out)["error"] == "NoConvergence"


def test_monte_carlo_commands(capsys, tmp_path):
    code, out, _ = _run(capsys, "mc-tail", "--model", "linear", "--n", "20", "--m0", "10",
                        "--t", "1", "--b", "0.8", "--replicas", "50000", "--seed", "1",
                        "--oracle", "--out", str(tmp_path))
    s = _summary(out)
    assert code == 0 and abs(s["oracle_z"]) < 4
    saved = json.loads((tmp_path / "mc_tail.json").read_text())
    assert saved["config"]["seed"] == 1 and saved["hits"] == s["hits"]
    code, out, _ = _run(capsys, "ldp-slope", "--model", "linear", "--n-list", "10,20",
                        "--m0-fraction", "0.5", "--t", "1", "--b", "1.0", "--replicas",
                        "50000", "--seed", "2", "--out", str(tmp_path))
    assert code == 0 and len(_summary(out)["rows"]) == 2
    code, out, _ = _run(capsys, "conditioned-share", "--model", "linear", "--n", "20",
                        "--t", "1", "--b", "0.8", "--replicas", "20000", "--seed", "3",
                        "--out", str(tmp_path))
    assert code == 0 and _summary(out)["hits"] >= 30
    code, out, _ = _run(capsys, "conditioned-share", "--model", "linear", "--n", "20",
                        "--t", "1", "--b", "1.5", "--replicas", "100", "--seed", "3",
                        "--out", str(tmp_path))
    assert code == 1 and _summary(out)["error"] == "InsufficientHits"


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "luminescence", "asymptote", "--model", "q211"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert json.loads(res.stdout)["i0"] == 1
