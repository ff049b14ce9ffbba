import csv
import io
import json
import subprocess
import sys

import numpy as np
import pytest

from netlim.cli import load_config, main
from netlim.limit_law import LimitLaw
from netlim.model import CovFunction

from conftest import config_c1, decoupled


def write_cfg(tmp_path, params, **sections):
    doc = {"params": params.to_dict(), "quadrature": {"nodes_gh": 32}, "out": str(tmp_path / "out"),
           "seed": 11, **sections}
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


def run(path, command, *extra):
    return main(["--config", str(path), "--command", command, *extra])


def test_limit_decoupled(tmp_path, capsys):
    cfg = write_cfg(tmp_path, decoupled())
    assert run(cfg, "limit") == 0
    law = LimitLaw.loads((tmp_path / "out" / "limitlaw.json").read_text())
    assert np.all(law.c == 0) and np.all(law.K == 0)
    assert "||K^0||_F = 0" in capsys.readouterr().out


def test_limit_c1_and_determinism(tmp_path):
    cfg = write_cfg(tmp_path, config_c1())
    assert run(cfg, "limit") == 0
    out = tmp_path / "out" / "limitlaw.json"
    first = out.read_bytes()
    doc = json.loads(first)
    assert doc["c"][0] == 0.5
    assert doc["K"][0]["matrix"][0][0] == pytest.approx(0.02, abs=1e-15)
    assert doc["K"][1]["matrix"][0][0] == pytest.approx(0.01, abs=1e-15)
    assert run(cfg, "limit") == 0
    assert out.read_bytes() == first


def test_limit_validation_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, config_c1(gamma=1.0))
    assert run(cfg, "limit") == 2
    assert "gamma out of [0,1)" in capsys.readouterr().err


def test_missing_field_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, config_c1())
    doc = json.loads(cfg.read_text())
    del doc["params"]["j_bar"]
    cfg.write_text(json.dumps(doc))
    assert run(cfg, "simulate") == 2
    assert "j_bar" in capsys.readouterr().err


def test_missing_sim_section_exit_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, config_c1())
    assert run(cfg, "simulate") == 2
    assert "sim.n" in capsys.readouterr().err


def test_simulate_determinism(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=2), sim={"n": 4, "trials": 2})
    assert run(cfg, "simulate") == 0
    files = ["ensemble.csv", "empirical_stats.json", "weights.csv"]
    first = {f: (tmp_path / "out" / f).read_bytes() for f in files}
    assert run(cfg, "simulate") == 0
    assert all((tmp_path / "out" / f).read_bytes() == first[f] for f in files)
    rows = list(csv.reader(io.StringIO(first["ensemble.csv"].decode())))
    assert rows[0] == ["trial", "neuron", "time", "u"] and len(rows) == 1 + 2 * 9 * 3
    stats = json.loads(first["empirical_stats.json"])
    assert len(stats) == 2 and stats[0]["horizon_T"] == 2


def test_simulate_binary_and_seed_override(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, config_c1(T=2), sim={"n": 4, "format": "bin"})
    assert run(cfg, "simulate") == 0
    a = (tmp_path / "out" / "ensemble.bin").read_bytes()
    assert a[:4] == b"NSIM" and len(a) == 16 + 9 * 3 * 8
    monkeypatch.setenv("NETLIM_SEED", "12")
    assert run(cfg, "simulate") == 0
    b = (tmp_path / "out" / "ensemble.bin").read_bytes()
    assert a != b
    assert run(cfg, "simulate", "--seed", "11") == 0
    assert (tmp_path / "out" / "ensemble.bin").read_bytes() == a


def test_simulate_zero_lambda_constant_weights(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=2, lambda_=CovFunction.zero(1)), sim={"n": 4})
    assert run(cfg, "simulate") == 0
    J = np.loadtxt(tmp_path / "out" / "weights.csv", delimiter=",")
    assert J.shape == (9, 9) and np.all(J == 1.0 / 9)


def test_converge_decoupled_passes(tmp_path):
    cfg = write_cfg(tmp_path, decoupled(T=3),
                    plan={"mode": "averaged", "n_list": [100, 500], "trials_per_n": 10})
    assert run(cfg, "converge", "--plot-data") == 0
    summary = json.loads((tmp_path / "out" / "report.json").read_text())
    assert summary["check"]["passed"]
    assert (tmp_path / "out" / "plot_mean_err.dat").read_text().startswith("201 ")


def test_converge_bad_plan_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=3), plan={"n_list": [50, 25]})
    assert run(cfg, "converge") == 2
    cfg = write_cfg(tmp_path, config_c1(T=3), plan={"n_list": [25], "mode": "sideways"})
    assert run(cfg, "converge") == 2


def test_converge_c1_rows(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=3),
                    plan={"n_list": [10, 20], "trials_per_n": 3, "metrics": ["mean", "cov"]})
    run(cfg, "converge")
    rows = list(csv.DictReader(io.StringIO((tmp_path / "out" / "report.csv").read_text())))
    keys = {(r["n"], r["trial"], r["metric"]) for r in rows}
    assert len(keys) == len(rows) == 2 * 3 * 3


def test_converge_uses_limit_law_file(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=3))
    run(cfg, "limit")
    cfg = write_cfg(tmp_path, config_c1(T=3), limit_law="out/limitlaw.json",
                    plan={"mode": "ergodic", "n_list": [40], "mc_samples": 20_000, "h": "f_pair_T"})
    assert run(cfg, "converge") in (0, 1)
    mismatch = write_cfg(tmp_path, config_c1(T=3, j_bar=2.0), limit_law="out/limitlaw.json",
                         plan={"n_list": [40]})
    assert run(mismatch, "converge") == 2


def test_oracle_decoupled_all_zero(tmp_path):
    cfg = write_cfg(tmp_path, decoupled(T=3, lambda_=CovFunction.separable([0.0, 0.0, 0.0]),
                                        theta_bar=0.0, gamma=0.0), oracle={"N": 1000})
    assert run(cfg, "oracle") == 0
    rows = list(csv.DictReader(io.StringIO((tmp_path / "out" / "oracle.csv").read_text())))
    c_rows = [r for r in rows if r["entry"].startswith("c[")]
    assert c_rows and all(float(r["z"]) == 0.0 for r in c_rows)


def test_oracle_sample_size_exit_2(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=2), oracle={"N": 50})
    assert run(cfg, "oracle") == 2


def test_oracle_c1_small(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(T=3), oracle={"N": 20_000})
    assert run(cfg, "oracle") == 0


def test_env_overrides(tmp_path):
    cfg = write_cfg(tmp_path, config_c1())
    c = load_config(str(cfg), env={"NETLIM_SEED": "7", "NETLIM_THREADS": "3"})
    assert c.seed == 7 and c.threads == 3
    assert load_config(str(cfg), env={}).seed == 11


def test_config_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path, config_c1(), sim={"n": 4}, plan={"n_list": [5]})
    c = load_config(str(cfg), env={})
    again = tmp_path / "again.json"
    again.write_text(json.dumps(c.to_dict()))
    assert load_config(str(again), env={}).to_dict() == c.to_dict()


def test_console_script(tmp_path):
    cfg = write_cfg(tmp_path, decoupled(T=2))
    res = subprocess.run([sys.executable, "-m", "netlim.cli", "--config", str(cfg),
                          "--command", "limit"], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert (tmp_path / "out" / "limitlaw.json").exists()
