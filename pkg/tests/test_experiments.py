"""
FHN 尺度的完整實驗（執行: pytest -m slow）

ρ = 0.01、γ = 5、h = 5/8、Δt = 2、BDF1、[−80, 80] Neumann
"""
import json
from fractions import Fraction
from math import gcd

import pytest

from latticewave.fullydiscrete import check_shift_periodicity, solve_fully_discrete_wave, sweep
from latticewave.grid import make_rational
from latticewave.main import EXIT_OK, build_context, main, pulse_trajectory
from latticewave.models import RunConfig
from latticewave.settings import Settings
from latticewave.timesim import measure_wavespeed, profile_from_trajectory
from latticewave.worker import CellPool

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def fhn_context(tmp_path_factory):
    config = RunConfig.model_validate({"run": {"output_dir": str(tmp_path_factory.mktemp("fhn"))}})
    return build_context("solve-wave", config, Settings(), workers=1)


@pytest.fixture(scope="module")
def fhn_trajectory(fhn_context):
    return pulse_trajectory(fhn_context, fhn_context.r)


def _solve_cell(ctx, trajectory, p, q):
    g = ctx.config.grid
    seed = profile_from_trajectory(trajectory, p, ctx.L, extension=g.extension)
    return solve_fully_discrete_wave(ctx.model, ctx.kernel, ctx.scheme, make_rational(p, q, strict=False),
                                     g.dt, ctx.r, seed, tol=ctx.config.run.tol,
                                     max_iter=ctx.config.run.max_iter, lhs_scale=ctx.lhs_scale,
                                     seed_label="simulation")


@pytest.fixture(scope="module")
def fhn_cell(fhn_context, fhn_trajectory):
    # (p, q) = (8, 5)，r = 0.11
    return _solve_cell(fhn_context, fhn_trajectory, 8, 5)


def test_fhn_semidiscrete_pulse(tmp_path):
    assert main(["solve-semi", "--out", str(tmp_path)]) == EXIT_OK
    doc = json.loads((tmp_path / "solve-semi" / "wave.json").read_text())
    assert doc["c0"] > 0
    assert doc["residual"] < 1e-10
    assert doc["sigma_min"] < doc["sigma_gap"]


def test_fhn_fully_discrete_cell(tmp_path):
    assert main(["solve-wave", "--out", str(tmp_path)]) == EXIT_OK
    out = tmp_path / "solve-wave"
    assert (out / "profile.csv").exists()
    doc = json.loads((out / "wave_p8_q5_r0.1100.json").read_text())
    assert Fraction(doc["c"]) == Fraction(5, 16)
    assert doc["residual"] < 1e-10
    assert doc["front_amplitude"] > 0.5


def test_fhn_cell_at_reference_speed(fhn_cell):
    assert fhn_cell.c == Fraction(5, 16)
    assert float(fhn_cell.c) == 0.3125
    assert fhn_cell.residual < 1e-10
    assert fhn_cell.front_amplitude > 0.5


def test_fhn_cell_is_shift_periodic(fhn_cell, fhn_context):
    assert check_shift_periodicity(fhn_cell, fhn_context.model, fhn_context.kernel) < 1e-8


def test_fhn_speed_is_multivalued_in_detuning(fhn_context):
    g = fhn_context.config.grid
    with CellPool(workers=1) as pool:
        result = sweep(fhn_context.model, fhn_context.kernel, fhn_context.scheme, g.dt, [7, 8], "extended",
                       [0.1, 0.11, 0.12], float(fhn_context.L), ("simulation", "neighbor"),
                       extension=g.extension, lhs_scale=fhn_context.lhs_scale, pool=pool)
    assert result.complete
    multivalued = result.multivalued()
    assert multivalued
    assert all(len(speeds) >= 2 for speeds in multivalued.values())


def test_fhn_simulation_speed_matches_wave_cell(fhn_context, fhn_trajectory):
    measured = measure_wavespeed(fhn_trajectory).profile_speed
    assert measured > 0
    dt = Fraction(fhn_context.config.grid.dt)
    # 最接近模擬波速的格點 c = q/(pΔt)
    cells = [(p, q) for p in range(1, 17) for q in range(1, 2 * p + 1) if gcd(p, q) == 1]
    p, q = min(cells, key=lambda pq: abs(float(Fraction(pq[1], pq[0]) / dt) - measured))
    wave = _solve_cell(fhn_context, fhn_trajectory, p, q)
    assert wave.residual < 1e-10
    assert abs(float(wave.c) - measured) < 0.02 * float(wave.c)


def test_fhn_simulation_speed(tmp_path):
    assert main(["simulate", "--out", str(tmp_path)]) == EXIT_OK
    report = json.loads((tmp_path / "simulate" / "wavespeed.json").read_text())
    assert report["profile_speed"] > 0
