"""
CLI 與設定測試
"""
import json

import pytest
from pydantic import ValidationError

import latticewave.main as cli
from latticewave.fullydiscrete import SweepResult
from latticewave.main import EXIT_CONFIG, EXIT_OK, EXIT_SOLVER, apply_settings, load_config, main, run
from latticewave.models import KernelBlock, RunConfig, SweepRow
from latticewave.settings import Settings


def _write_config(path, document):
    path.write_text(json.dumps(document))
    return str(path)


NAGUMO_CONFIG = {
    "model": {"name": "nagumo"},
    "kernel": {"name": "nearest", "tau": 4.0},
    "grid": {"p": 2, "q": 1, "L": 40, "dt": "0.5", "p0": 2, "extension": "neumann"},
    "run": {"r": 0.4, "n_steps": 100, "stride": 10},
}


# ==========================================
# 設定
# ==========================================
def test_default_config():
    config = load_config(None)
    assert config.model.name == "fhn"
    assert config.kernel.h == 0.625
    assert config.kernel.coupling_strength == pytest.approx(2.56)
    assert (config.grid.p, config.grid.q) == (8, 5)


def test_config_example_is_valid():
    example = RunConfig.model_config["json_schema_extra"]["example"]
    config = RunConfig.model_validate(example)
    assert config.grid.dt == "2"


def test_config_hash_ignores_output_dir():
    a = RunConfig()
    b = RunConfig.model_validate({"run": {"output_dir": "elsewhere"}})
    c = RunConfig.model_validate({"run": {"r": 0.12}})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()


def test_kernel_block_rejects_two_scales():
    with pytest.raises(ValidationError):
        KernelBlock(tau=1.0, h=0.5)


def test_non_positive_dt_rejected():
    with pytest.raises(ValidationError):
        RunConfig.model_validate({"grid": {"dt": "-1/2"}})


def test_settings_fill_unset_run_fields():
    settings = Settings(newton_tol=1e-8, newton_max_iter=7, output_dir="env-runs")
    config = apply_settings(RunConfig(), settings)
    assert config.run.tol == 1e-8
    assert config.run.max_iter == 7
    assert config.run.output_dir == "env-runs"
    assert config.config_hash() != RunConfig().config_hash()


def test_config_file_wins_over_settings():
    settings = Settings(newton_tol=1e-8, newton_max_iter=7, output_dir="env-runs")
    explicit = RunConfig.model_validate({"run": {"tol": 1e-12, "output_dir": "mine", "r": 0.2}})
    config = apply_settings(explicit, settings)
    assert config.run.tol == 1e-12
    assert config.run.output_dir == "mine"
    assert config.run.r == 0.2
    assert config.run.max_iter == 7


def test_settings_reach_run_metadata(tmp_path):
    settings = Settings(newton_tol=1e-9, output_dir=tmp_path)
    assert run("check-assumptions", RunConfig(), settings) == EXIT_OK
    metadata = json.loads((tmp_path / "check-assumptions" / "run_metadata.json").read_text())
    assert metadata["tolerances"]["newton_tol"] == 1e-9


# ==========================================
# 結束碼
# ==========================================
def test_unknown_command(tmp_path):
    config = RunConfig.model_validate({"run": {"output_dir": str(tmp_path)}})
    assert run("bogus", config) == EXIT_CONFIG
    assert not (tmp_path / "bogus").exists()


def test_invalid_config_file(tmp_path):
    path = _write_config(tmp_path / "bad.json", {"kernel": {"tau": 1.0, "h": 0.5}})
    assert main(["check-assumptions", "--config", path, "--out", str(tmp_path)]) == EXIT_CONFIG


def test_missing_config_file(tmp_path):
    assert main(["check-assumptions", "--config", str(tmp_path / "nope.json")]) == EXIT_CONFIG


def test_invalid_worker_count(tmp_path):
    assert main(["check-assumptions", "--workers", "0", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_coupling_below_q_is_a_user_error(tmp_path):
    path = _write_config(tmp_path / "pq.json", {"grid": {"p": 3, "q": 5}})
    out = tmp_path / "out"
    assert main(["solve-wave", "--config", path, "--out", str(out)]) == EXIT_CONFIG
    metadata = json.loads((out / "solve-wave" / "run_metadata.json").read_text())
    assert metadata["exit_code"] == EXIT_CONFIG


# ==========================================
# 命令輸出
# ==========================================
def test_check_assumptions_outputs(tmp_path):
    assert main(["check-assumptions", "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "check-assumptions"
    for name in ("assumptions.json", "run_metadata.json", "metrics.prom"):
        assert (out / name).exists()
    report = json.loads((out / "assumptions.json").read_text())
    assert report["hs1"]["passed"]
    assert report["hs3"]["branch"] == "b"
    assert report["config_hash"] == RunConfig().config_hash()
    assert "latticewave_run_info" in (out / "metrics.prom").read_text()


def test_outputs_are_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["check-assumptions", "--out", str(tmp_path / name), "--seed", "7"]) == EXIT_OK
    first = (tmp_path / "a" / "check-assumptions" / "assumptions.json").read_bytes()
    second = (tmp_path / "b" / "check-assumptions" / "assumptions.json").read_bytes()
    assert first == second


def test_simulate_nagumo_front(tmp_path):
    path = _write_config(tmp_path / "nagumo.json", NAGUMO_CONFIG)
    assert main(["simulate", "--config", path, "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "simulate"
    report = json.loads((out / "wavespeed.json").read_text())
    assert report["speed"] < 0
    assert report["profile_speed"] > 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0].startswith("# config_hash=")
    assert lines[1] == "t,xi,u0"


def test_incomplete_sweep_exits_with_solver_error(tmp_path, monkeypatch):
    row = SweepRow(p=1, q=1, c=0.5, r=0.11, converged=False, residual=float("nan"),
                   front_amplitude=0.0, iters=0, seed="none")

    def lost_column(*args, **kwargs):
        return SweepResult(rows=[row], lost=[(1, 1)])

    monkeypatch.setattr(cli, "sweep", lost_column)
    path = _write_config(tmp_path / "sweep.json", {"sweep": {"seed_policy": ["neighbor"]}})
    assert main(["sweep", "--config", path, "--out", str(tmp_path)]) == EXIT_SOLVER
    out = tmp_path / "sweep"
    assert len((out / "sweep.csv").read_text().splitlines()) == 3
    metadata = json.loads((out / "run_metadata.json").read_text())
    assert metadata["exit_code"] == EXIT_SOLVER
