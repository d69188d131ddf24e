from __future__ import annotations

import json
import subprocess
import sys

import numpy as np
import pytest

from memflow.cli import main
from memflow.config import parse_config
from memflow.deformation import read_checkpoint
from memflow.io import read_csv, sha256_file
from memflow.runner import resolve_config


def write_cfg(tmp_path, name, base="homogeneous_startup_ucm", **sections):
    cfg = resolve_config(base).with_overrides(scenario={"name": name}, **sections)
    path = tmp_path / f"{name}.ini"
    path.write_text(cfg.to_ini())
    return path


@pytest.fixture(scope="module")
def couette_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("couette")
    assert main(["run", "--config", "couette_startup_ucm", "--out-dir", str(out)]) == 0
    return out


def test_list_scenarios(capsys):
    assert main(["list-scenarios"]) == 0
    names = [line.split()[0] for line in capsys.readouterr().out.splitlines()]
    assert "couette_startup_ucm" in names and "quiescent" in names


def test_validate_config(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[fluid]\nomega = 3\n")
    assert main(["validate-config", "--config", "quiescent"]) == 0
    assert main(["validate-config", "--config", str(bad), "--config", "quiescent"]) == 2
    err = capsys.readouterr().err
    assert "fluid.omega" in err and "line 2" in err


def test_quiescent_run_is_all_zero(tmp_path):
    assert main(["run", "--config", "quiescent", "--out-dir", str(tmp_path)]) == 0
    header, data = read_csv(tmp_path / "diagnostics.csv")
    for col in ("kinetic_energy", "max_tau", "tau12", "n1", "max_divergence", "det_drift"):
        assert np.all(data[:, header.index(col)] == 0.0)
    _, prof = read_csv(tmp_path / "profile.csv")
    assert np.all(prof[:, 2] == 0.0)


def test_couette_matches_startup_oracle(couette_run, tmp_path, capsys):
    rep = tmp_path / "cmp.json"
    assert main(["compare", str(couette_run), "--oracle", "startup", "--tol", "1e-3", "--report", str(rep)]) == 0
    data = json.loads(rep.read_text())
    assert data["passed"] and data["max_rel"] <= 1e-3
    assert "PASS" in capsys.readouterr().out
    assert main(["compare", str(couette_run), "--oracle", "ucm", "--tol", "1e-3"]) == 0


def test_manifest_hashes_match_files(couette_run):
    man = json.loads((couette_run / "manifest.json").read_text())
    assert set(man["files"]) == {"config.ini", "diagnostics.csv", "profile.csv", "report.json"}
    for rel, meta in man["files"].items():
        assert sha256_file(couette_run / rel) == meta["sha256"]
        assert (couette_run / rel).stat().st_size == meta["bytes"]
    assert "numpy" in man["versions"] and "total_s" in man["timings"]


def test_config_echo_reproduces_run(couette_run):
    echoed = parse_config((couette_run / "config.ini").read_text())
    assert echoed.values == resolve_config("couette_startup_ucm").values


def test_self_compare_is_zero(couette_run, tmp_path):
    rep = tmp_path / "self.json"
    assert main(["compare", str(couette_run), "--oracle", str(couette_run), "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["max_rel"] == 0.0


def test_runs_are_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--config", "doi_edwards_shear", "--out-dir", str(out), "--emit-checkpoints"]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_checkpoints_round_trip(tmp_path):
    cfg = write_cfg(tmp_path, "ck", base="poiseuille_startup", time={"t_end": 0.05}, output={"checkpoint_every": 5})
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out), "--emit-checkpoints"]) == 0
    cks = sorted((out / "checkpoints").glob("step_*.csv"))
    assert [p.name for p in cks] == ["step_0000005.csv", "step_0000010.csv"]
    field, step = read_checkpoint(cks[-1])
    assert step == 10 and field.values.shape[1] == 2 * 16


def test_omega_halved_scales_by_two(tmp_path):
    full = write_cfg(tmp_path, "full", time={"t_end": 1.0})
    half = write_cfg(tmp_path, "half", time={"t_end": 1.0}, fluid={"omega": 0.25})
    assert main(["run", "--config", str(full), "--config", str(half), "--out-dir", str(tmp_path / "batch")]) == 0
    a, b = tmp_path / "batch" / "full", tmp_path / "batch" / "half"
    cols = "tau11,tau12,tau22,n1,max_tau"
    assert main(["compare", str(a), "--oracle", str(b), "--scale", "2", "--tol", "1e-12", "--columns", cols]) == 0
    assert main(["compare", str(a), "--oracle", str(b), "--tol", "1e-3", "--columns", cols]) == 1


def test_newtonian_oracle(tmp_path):
    cfg = write_cfg(tmp_path, "newt", base="poiseuille_startup", fluid={"omega": 0.0}, time={"t_end": 0.1})
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 0
    assert main(["compare", str(out), "--oracle", "newtonian", "--tol", "0"]) == 0


def test_schema_mismatch_exit_2(tmp_path, couette_run):
    out = tmp_path / "q"
    assert main(["run", "--config", "quiescent", "--out-dir", str(out)]) == 0
    assert main(["compare", str(out), "--oracle", str(couette_run)]) == 2
    assert main(["compare", str(out), "--oracle", "bogus"]) == 2


def test_bad_config_exit_2(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[time]\ndt = -1\n")
    assert main(["run", "--config", str(bad), "--out-dir", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_abort_exit_3(tmp_path):
    cfg = write_cfg(
        tmp_path,
        "blowup",
        geometry={"flow": "elongation", "rate": 2.0},
        measure={"variant": "lcm"},
        time={"t_end": 12.0, "dt": 0.02},
        output={"record_every": 1},
    )
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 3
    report = json.loads((out / "report.json").read_text())
    assert report["status"] == "aborted" and "singular" in report["error"]
    assert list((out / "checkpoints").glob("last_valid_*.csv"))
    header, data = read_csv(out / "diagnostics.csv")
    assert data[-1, header.index("t")] < 12.0


@pytest.mark.parametrize("overrides", [{"fluid": {"omega": 0.5}}, {"stationary": {"forcing": 1.0}}])
def test_not_converged_exit_4(tmp_path, overrides):
    cfg = write_cfg(tmp_path, "stat", base="poiseuille_stationary", **overrides)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out)]) == 4
    assert json.loads((out / "report.json").read_text())["status"] == "not_converged"


def test_stationary_profile_written(tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", "poiseuille_stationary", "--out-dir", str(out)]) == 0
    header, data = read_csv(out / "profile.csv")
    assert header == ["cell", "y", "u", "tau11", "tau12", "tau22", "n1"]
    _, it = read_csv(out / "iterations.csv")
    assert it[-1, 1] < 1e-8


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "memflow", "run", "--config", "quiescent", "--out-dir", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "quiescent: ok" in proc.stdout
