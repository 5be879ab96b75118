"""
命令列介面 - 讀取設定檔、執行求解器或檢查、輸出資料檔

結束碼：0 成功、1 設定或前置條件錯誤、2 數值求解失敗
"""
import argparse
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy
from pydantic import ValidationError

from . import __version__
from .bdf import BdfScheme, apply_discrete_derivative, bdf_scheme
from .errors import ConfigError, LatticeWaveError, SolverError
from .fullydiscrete import admissible_pairs, save_fully_discrete, solve_fully_discrete_wave, sweep
from .grid import export_profile_csv, make_rational, spline_resample
from .kernel import InteractionKernel, build_gaussian_kernel, build_nearest_neighbor_kernel, check_hs1
from .metrics import run_info, system_snapshot, write_metrics
from .models import AssumptionReport, RunConfig, RunMetadata
from .reaction import ReactionModel, check_hs2, check_hs3, check_jacobian, model_from_name
from .semidiscrete import SemiDiscreteWave, save_wave, solve_semidiscrete_wave
from .settings import Settings, configure_logging, get_settings
from .spectral import (
    CharacteristicContext,
    build_twisted_operator,
    det_table,
    export_coo,
    export_scan_csv,
    hm_grid,
    quasi_inverse_ratio_study,
    quasi_inverse_solve,
    spectral_convergence_study,
    summarize_scan,
)
from .timesim import (
    Trajectory,
    export_trajectory_csv,
    front_initial_data,
    initial_state,
    lattice_grid,
    measure_wavespeed,
    profile_from_trajectory,
    pulse_initial_data,
    simulate,
)
from .worker import CellPool

logger = logging.getLogger(__name__)

COMMANDS = ("check-assumptions", "solve-semi", "solve-wave", "sweep", "spectrum-scan", "diagnostic", "simulate")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_SOLVER = 2


@dataclass
class RunContext:
    command: str
    config: RunConfig
    settings: Settings
    model: ReactionModel
    kernel: InteractionKernel
    scheme: BdfScheme
    out: Path
    config_hash: str
    workers: int

    @property
    def lhs_scale(self) -> float:
        return self.config.kernel.lhs_scale

    @property
    def L(self) -> Fraction:
        return Fraction(str(self.config.grid.L))

    @property
    def r(self) -> float:
        return self.config.run.r

    def write_json(self, name: str, document) -> Path:
        path = self.out / name
        path.write_text(document.model_dump_json(indent=2))
        return path


# ==========================================
# 設定
# ==========================================
def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return RunConfig.model_validate_json(text)


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """--out / --seed / --tol 覆寫設定檔"""
    update = {}
    if args.out is not None:
        update["output_dir"] = args.out
    if args.seed is not None:
        update["rng_seed"] = args.seed
    if args.tol is not None:
        update["tol"] = args.tol
    if not update:
        return config
    run = config.run.model_validate({**config.run.model_dump(exclude_unset=True), **update})
    return config.model_copy(update={"run": run})


def apply_settings(config: RunConfig, settings: Settings) -> RunConfig:
    """LATTICEWAVE_NEWTON_TOL / NEWTON_MAX_ITER / OUTPUT_DIR 只補上設定檔與命令列沒給的 run 欄位"""
    defaults = {
        "tol": settings.newton_tol,
        "max_iter": settings.newton_max_iter,
        "output_dir": str(settings.output_dir),
    }
    update = {name: value for name, value in defaults.items() if name not in config.run.model_fields_set}
    if not update:
        return config
    run = config.run.model_validate({**config.run.model_dump(exclude_unset=True), **update})
    return config.model_copy(update={"run": run})


def build_kernel(config: RunConfig, model: ReactionModel) -> InteractionKernel:
    block = config.kernel
    if block.name == "gaussian":
        return build_gaussian_kernel(model.d, model.d_diff, block.coupling_strength, block.tail_tol)
    return build_nearest_neighbor_kernel(model.d, model.d_diff, block.coupling_strength)


def build_context(command: str, config: RunConfig, settings: Settings, workers: Optional[int]) -> RunContext:
    config = apply_settings(config, settings)
    model = model_from_name(config.model.name, rho=config.model.rho, gamma=config.model.gamma)
    kernel = build_kernel(config, model)
    config_hash = config.config_hash()
    out = Path(config.run.output_dir) / command
    out.mkdir(parents=True, exist_ok=True)
    return RunContext(command, config, settings, model, kernel, bdf_scheme(config.scheme), out,
                      config_hash, workers or settings.workers)


# ==========================================
# 共用步驟
# ==========================================
def pulse_trajectory(ctx: RunContext, r: float) -> Trajectory:
    """從局部激發開始的時間模擬（前緣模型使用 tanh 波前）"""
    run = ctx.config.run
    grid = lattice_grid(ctx.model, int(ctx.L), ctx.config.grid.extension)
    if ctx.model.is_pulse():
        U0 = pulse_initial_data(ctx.model, grid, center=int(ctx.L) // 2)
    else:
        U0 = front_initial_data(ctx.model, grid)
    dt = float(Fraction(ctx.config.grid.dt))
    return simulate(ctx.model, ctx.kernel, ctx.scheme, r, initial_state(U0, dt), run.n_steps, grid,
                    stride=run.stride, lhs_scale=ctx.lhs_scale, tol=ctx.settings.step_tol)


def semidiscrete_wave(ctx: RunContext) -> SemiDiscreteWave:
    """
    前緣模型直接以 tanh 種子求解；脈衝模型先做時間模擬取得剖面與波速猜測
    """
    g = ctx.config.grid
    run = ctx.config.run
    seed, c_guess = None, None
    if ctx.model.is_pulse():
        trajectory = pulse_trajectory(ctx, ctx.r)
        seed = profile_from_trajectory(trajectory, g.p0, ctx.L, extension=g.extension)
        c_guess = measure_wavespeed(trajectory).profile_speed
        print(f"📊 時間模擬波速猜測: c ≈ {c_guess:.6f}")
    return solve_semidiscrete_wave(ctx.model, ctx.kernel, ctx.r, g.p0, ctx.L, seed, c_guess,
                                   extension=g.extension, lhs_scale=ctx.lhs_scale, tol=run.tol,
                                   max_iter=run.max_iter)


# ==========================================
# 命令
# ==========================================
def cmd_check_assumptions(ctx: RunContext) -> int:
    seed = ctx.config.run.rng_seed
    report = AssumptionReport(
        hs1=check_hs1(ctx.kernel),
        hs2=check_hs2(ctx.model),
        jacobian=check_jacobian(ctx.model, ctx.r, seed=seed),
        hs3=check_hs3(ctx.model, ctx.r, seed=seed),
        config_hash=ctx.config_hash,
    )
    ctx.write_json("assumptions.json", report)
    for name, ok in (("HS1", report.hs1.passed), ("HS2", report.hs2.passed),
                     ("Jacobian", report.jacobian.passed), ("HS3", report.hs3.branch is not None)):
        print(f"{'✅' if ok else '❌'} {name}")
    if report.hs3.branch == "b":
        print(f"   HS3 分支 (b)，Γ = {report.hs3.gamma:g}")
    return EXIT_OK


def cmd_solve_semi(ctx: RunContext) -> int:
    wave = semidiscrete_wave(ctx)
    save_wave(wave, ctx.out, ctx.config_hash)
    export_profile_csv(wave.U0, ctx.out / "U0.csv", ctx.config_hash)
    print(f"✅ c̄₀ = {wave.c0:.10f}，殘差 {wave.residual:.2e}，λ̃ = {wave.lambda_tilde:.6f}")
    return EXIT_OK


def cmd_solve_wave(ctx: RunContext) -> int:
    g = ctx.config.grid
    run = ctx.config.run
    coupling = make_rational(g.p, g.q)
    if ctx.model.is_pulse():
        seed = profile_from_trajectory(pulse_trajectory(ctx, ctx.r), g.p, ctx.L, extension=g.extension)
        label = "simulation"
    else:
        reference = semidiscrete_wave(ctx)
        seed = spline_resample(reference.U0, g.p, ctx.L, g.extension, q=g.q)
        label = "semidiscrete"
    wave = solve_fully_discrete_wave(ctx.model, ctx.kernel, ctx.scheme, coupling, g.dt, ctx.r, seed,
                                     tol=run.tol, max_iter=run.max_iter, lhs_scale=ctx.lhs_scale,
                                     threshold=ctx.settings.nontrivial_threshold, seed_label=label)
    save_fully_discrete(wave, ctx.out, ctx.config_hash)
    export_profile_csv(wave.profile, ctx.out / "profile.csv", ctx.config_hash)
    print(f"✅ (p, q) = ({g.p}, {g.q})，c = {wave.c}，殘差 {wave.residual:.2e}，"
          f"振幅 {wave.front_amplitude:.4f}")
    return EXIT_OK


def cmd_sweep(ctx: RunContext) -> int:
    g = ctx.config.grid
    run = ctx.config.run
    block = ctx.config.sweep
    reference = None
    if "semidiscrete" in block.seed_policy and not ctx.model.is_pulse():
        reference = semidiscrete_wave(ctx).U0

    def report(p, q, rows):
        n_ok = sum(row.converged for row in rows)
        print(f"📊 (p, q) = ({p}, {q})：{n_ok}/{len(rows)} 收斂")

    pairs = admissible_pairs(block.p_values, block.q_rule)
    print(f"🚀 sweep: {len(pairs)} 組 (p, q)，每組 {len(block.r_values)} 個 r")
    with CellPool(workers=ctx.workers) as pool:
        result = sweep(ctx.model, ctx.kernel, ctx.scheme, g.dt, block.p_values, block.q_rule,
                       block.r_values, float(ctx.L), tuple(block.seed_policy), reference,
                       simulation_steps=run.n_steps, extension=g.extension, lhs_scale=ctx.lhs_scale,
                       tol=run.tol, max_iter=run.max_iter,
                       threshold=ctx.settings.nontrivial_threshold, pool=pool, on_column=report)
    result.to_csv(ctx.out / "sweep.csv", ctx.config_hash)
    converged = result.converged()
    print(f"✅ {len(converged)}/{len(result.rows)} 個格點收斂")
    for r, speeds in result.multivalued().items():
        print(f"📊 r = {r:.3f}：{len(speeds)} 個收斂波速 {speeds}")
    if not result.complete:
        print(f"❌ sweep 未完成：{len(result.lost)} 組 (p, q) 沒有結果"
              f"{'（已中斷）' if result.interrupted else ''}")
        return EXIT_SOLVER
    return EXIT_OK


def cmd_spectrum_scan(ctx: RunContext) -> int:
    g = ctx.config.grid
    run = ctx.config.run
    wave = semidiscrete_wave(ctx)
    base = CharacteristicContext(ctx.model, ctx.kernel, wave.c0, ctx.r, lhs_scale=ctx.lhs_scale)
    contexts = {"scan": base, "scan_twisted": CharacteristicContext(
        ctx.model, ctx.kernel, wave.c0, ctx.r, coupling=make_rational(g.p, g.q), lhs_scale=ctx.lhs_scale)}
    passed = True
    for name, context in contexts.items():
        table = det_table(context, rho_grid=run.rho_grid, points_per_period=run.y_points)
        report = summarize_scan(table).model_copy(update={"config_hash": ctx.config_hash})
        export_scan_csv(table, ctx.out / f"{name}.csv", ctx.config_hash)
        ctx.write_json(f"{name}.json", report)
        passed = passed and report.passed
        print(f"{'✅' if report.passed else '❌'} {name}: min|det| = {report.min_abs_det:.3e} "
              f"(y = {report.argmin_y:.4f}, ρ = {report.argmin_rho:.2f})")
    if not passed:
        print("⚠️ 特徵矩陣在虛軸上接近奇異")
    return EXIT_OK


def cmd_diagnostic(ctx: RunContext) -> int:
    g = ctx.config.grid
    run = ctx.config.run
    wave = semidiscrete_wave(ctx)
    coupling = make_rational(g.p, g.q)
    half_width = (int(ctx.L * g.p) // g.q) * g.q
    grid = hm_grid(coupling, half_width, ctx.model.d, g.extension)

    U0 = spline_resample(wave.U0, g.p, Fraction(half_width, g.p), g.extension, q=g.q)
    psi = apply_discrete_derivative(ctx.scheme, coupling.M, U0)
    zeros = np.zeros(ctx.model.d)
    psi = psi.with_values(-psi.values, P_minus=zeros, P_plus=zeros)
    exact = quasi_inverse_solve(ctx.model, ctx.kernel, ctx.scheme, coupling, wave, psi)
    print(f"📊 擬逆 Ψ = −π𝒟Ū₀：γ = {exact.gamma:.12f}，‖V‖∞ = {np.max(np.abs(exact.V.values)):.2e}")
    study = quasi_inverse_ratio_study(ctx.model, ctx.kernel, ctx.scheme, wave, g.q, [g.p],
                                      int(ctx.L), seed=run.rng_seed)
    ratio = max(study.values())

    for kind, name in (("K_kM", "diagnostic.json"), ("K_star_kM", "diagnostic_adjoint.json")):
        operator = build_twisted_operator(kind, ctx.kernel, coupling, grid, ctx.model, ctx.scheme, wave)
        report = spectral_convergence_study(operator, wave, ctx.scheme, run.deltas,
                                            ctx.settings.delta0, ctx.config_hash)
        report = report.model_copy(update={"quasi_inverse_ratio": ratio})
        ctx.write_json(name, report)
        export_coo(operator, ctx.out / f"{kind}.coo", ctx.config_hash)
        print(f"{'✅' if report.kappa_hat > 0 else '❌'} {kind}: κ̂ = {report.kappa_hat:.4e}")
    return EXIT_OK


def cmd_simulate(ctx: RunContext) -> int:
    trajectory = pulse_trajectory(ctx, ctx.r)
    export_trajectory_csv(trajectory, ctx.out / "trajectory.csv", ctx.config_hash)
    report = measure_wavespeed(trajectory, config_hash=ctx.config_hash)
    ctx.write_json("wavespeed.json", report)
    print(f"✅ 波速 {report.speed:.6f}（剖面波速 c = {report.profile_speed:.6f}）")
    return EXIT_OK


HANDLERS: dict[str, Callable[[RunContext], int]] = {
    "check-assumptions": cmd_check_assumptions,
    "solve-semi": cmd_solve_semi,
    "solve-wave": cmd_solve_wave,
    "sweep": cmd_sweep,
    "spectrum-scan": cmd_spectrum_scan,
    "diagnostic": cmd_diagnostic,
    "simulate": cmd_simulate,
}


# ==========================================
# 執行紀錄
# ==========================================
def write_run_metadata(ctx: RunContext, exit_code: int, wall_time: float) -> Path:
    settings = ctx.settings
    metadata = RunMetadata(
        command=ctx.command,
        config_hash=ctx.config_hash,
        package_version=__version__,
        python_version=platform.python_version(),
        numpy_version=np.__version__,
        scipy_version=scipy.__version__,
        rng_seed=ctx.config.run.rng_seed,
        tolerances={
            "newton_tol": ctx.config.run.tol,
            "step_tol": settings.step_tol,
            "nontrivial_threshold": settings.nontrivial_threshold,
            "delta0": settings.delta0,
        },
        wall_time_seconds=wall_time,
        exit_code=exit_code,
        system=system_snapshot(),
    )
    return ctx.write_json("run_metadata.json", metadata)


def run(command: str, config: RunConfig, settings: Optional[Settings] = None,
        workers: Optional[int] = None) -> int:
    """執行單一命令並回傳結束碼"""
    if command not in HANDLERS:
        print(f"❌ 未知的命令: {command}（可用: {', '.join(COMMANDS)}）")
        return EXIT_CONFIG
    settings = settings or get_settings()
    try:
        ctx = build_context(command, config, settings, workers)
    except (LatticeWaveError, ValueError) as e:
        print(f"❌ 設定錯誤: {e}")
        return EXIT_CONFIG

    print("=" * 60)
    print(f"  🚀 latticewave {__version__} - {command}")
    print(f"  設定雜湊: {ctx.config_hash[:16]}")
    print("=" * 60)
    run_info.labels(config_hash=ctx.config_hash, command=command).set(1)

    start_time = time.time()
    exit_code = EXIT_SOLVER
    try:
        exit_code = HANDLERS[command](ctx)
    except SolverError as e:
        print(f"❌ 數值求解失敗: {e}")
        logger.error(f"Command {command} failed: {e}")
    except (LatticeWaveError, ValueError) as e:
        exit_code = EXIT_CONFIG
        print(f"❌ 前置條件錯誤: {e}")
        logger.error(f"Command {command} rejected: {e}")
    except KeyboardInterrupt:
        print("\n⚠️ 接收到鍵盤中斷")
    finally:
        wall_time = time.time() - start_time
        write_run_metadata(ctx, exit_code, wall_time)
        write_metrics(ctx.out / "metrics.prom")
        print("-" * 60)
        print(f"👋 結束碼 {exit_code}，耗時 {wall_time:.2f} 秒，輸出於 {ctx.out}")
    return exit_code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticewave", description="全離散格點行波的求解與驗證")
    parser.add_argument("command", help=f"要執行的命令: {', '.join(COMMANDS)}")
    parser.add_argument("--config", type=str, default=None,
                        help="JSON 設定檔路徑 (預設: 內建的 FHN 設定)")
    parser.add_argument("--out", type=str, default=None,
                        help="輸出目錄 (覆寫 run.output_dir)")
    parser.add_argument("--workers", type=int, default=None,
                        help="sweep 平行 worker 數 (預設: LATTICEWAVE_WORKERS 或 1)")
    parser.add_argument("--seed", type=int, default=None,
                        help="亂數種子 (覆寫 run.rng_seed)")
    parser.add_argument("--tol", type=float, default=None,
                        help="Newton 殘差門檻 (覆寫 run.tol)")
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging()
    try:
        config = apply_overrides(load_config(args.config), args)
    except (ConfigError, ValidationError) as e:
        print(f"❌ 設定檔無效: {e}")
        return EXIT_CONFIG
    if args.workers is not None and args.workers < 1:
        print("❌ --workers 必須 >= 1")
        return EXIT_CONFIG
    return run(args.command, config, workers=args.workers)


if __name__ == "__main__":
    sys.exit(main())
