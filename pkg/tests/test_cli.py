import json
import subprocess
import sys
from pathlib import Path

import pytest

from shocklab import io
from shocklab.cli import main
from shocklab.config import ConfigError, load, sweep_configs, validate

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "system": {"name": "isentropic_ns", "params": {"gamma": 2.0, "nu": 1.0}},
    "shock": {"U_minus": [1.0, 0.0], "fixed": {"0": 0.5}, "lax": True},
    "profile": {"L": 20.0, "N": 1024},
    "discretization": {"L": 20.0, "N": 201},
}


def write_cfg(tmp_path, run, **extra):
    cfg = dict(BASE, run=run, **extra)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(cfg), encoding="utf-8")
    return p


def test_shipped_configs_validate():
    for p in sorted(CONFIGS.glob("*.json")):
        cfg = load(p)
        assert cfg["run"]["pipeline"] in {"profile", "spectrum", "damping", "manifold", "evolve", "conditional"}


def test_profile_pipeline(tmp_path):
    out = tmp_path / "out"
    assert main(["run", str(CONFIGS / "profile.json"), "--out", str(out)]) == 0
    rep = io.read_json(out / "report.json")
    assert rep["all_pass"]
    assert rep["results"]["residual"] < 1e-8
    prof = io.read_csv(out / "profile.csv")
    assert len(prof["x"]) == 2048


@pytest.mark.parametrize("bad", [
    {"discretization": {"L": 20.0, "N": 0}},
    {"discretization": {"L": 20.0, "N": 201, "order": 3}},
    {"run": {"pipeline": "nope"}},
    {"shock": {"U_minus": [1.0, 0.0], "U_plus": [0.5]}},
])
def test_invalid_config_exit_code(tmp_path, bad):
    cfg = dict(BASE, run={"pipeline": "profile"})
    cfg.update(bad)
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(cfg), encoding="utf-8")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    with pytest.raises(ConfigError):
        validate(cfg)


def test_unreadable_config(tmp_path):
    p = tmp_path / "broken.json"
    p.write_text("{not json", encoding="utf-8")
    assert main(["run", str(p)]) == 2


def test_solver_fault_exit_code(tmp_path):
    # the reversed jump admits no Lax profile
    p = tmp_path / "cfg.json"
    cfg = dict(BASE, run={"pipeline": "profile"})
    cfg["shock"] = {"U_minus": [0.5, -1.2247448713915889], "U_plus": [1.0, 0.0], "s": -2.449489742783178}
    p.write_text(json.dumps(cfg), encoding="utf-8")
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 1


def test_report_errors(tmp_path):
    assert main(["report", str(tmp_path)]) == 1
    (tmp_path / "report.json").write_text("{", encoding="utf-8")
    assert main(["report", str(tmp_path)]) == 1


def test_sweep_and_report(tmp_path):
    run = {"pipeline": "evolve", "mode": "nonlinear", "T": 4.0, "record_dt": 0.1, "fit_start": 1.0,
           "plots": False, "contamination": None}
    p = write_cfg(tmp_path, run, sweep=[{"discretization": {"N": 201}}, {"discretization": {"N": 301}}])
    assert len(sweep_configs(load(p))) == 2
    out = tmp_path / "out"
    assert main(["run", str(p), "--out", str(out)]) == 0
    assert io.read_json(out / "sweep.json")["entries"] == ["sweep_000", "sweep_001"]
    assert main(["report", str(out)]) == 0
    exps = io.read_csv(out / "report_exponents.csv")
    first = [d for r, d in zip(exps["run"], exps["delta_vs_first"]) if r == "sweep_000"]
    assert all(d == 0 for d in first)
    assert set(exps["norm"]) >= {"L2", "Linf", "H3", "alpha_dot"}
    checks = io.read_csv(out / "report_checks.csv")
    assert set(checks["run"]) == {"sweep_000", "sweep_001"}
    assert (out / "report_fits.csv").exists() and (out / "report.txt").exists()


def test_console_script_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "shocklab.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "run" in r.stdout and "report" in r.stdout
