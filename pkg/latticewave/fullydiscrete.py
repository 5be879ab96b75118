"""
全離散行波 - 在 p⁻¹ℤ 上求解 c𝒟_{k,M}Φ = ΔΦ + 𝒢(Φ; r)，以及 (c, r) sweep

c 與 r 固定、未知量只有 Φ：網格上只剩離散平移，不需要相位條件。
左側 𝒟_{k,M} 的位移是 q 的整數倍，右側 m 的位移是 m·p。
"""
import csv
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .bdf import BdfScheme, apply_discrete_derivative, derivative_matrix
from .errors import (
    GridMismatchError,
    MisalignedGridError,
    MissingContextError,
    SolverError,
    WorkerPoolError,
    TrivialSolutionError,
)
from .grid import (
    Extension,
    RationalCoupling,
    WaveProfile,
    block_diagonal,
    inner_product_scaled,
    make_rational,
    save_profile,
    spline_resample,
)
from .kernel import InteractionKernel, laplacian_matrix
from .metrics import sweep_cells_total, track_time
from .models import FullyDiscreteDocument, SweepRow
from .newton import newton_solve
from .reaction import ReactionModel
from .semidiscrete import SemiDiscreteWave
from .timesim import Trajectory, initial_state, lattice_grid, profile_from_trajectory, pulse_initial_data, simulate
from .worker import CellPool

logger = logging.getLogger(__name__)

NONTRIVIAL_THRESHOLD = 0.5


@dataclass(frozen=True, eq=False)
class FullyDiscreteWave:
    coupling: RationalCoupling
    scheme: BdfScheme
    dt: Fraction
    c: Fraction
    r: float
    profile: WaveProfile
    residual: float
    front_amplitude: float
    iterations: int = 0
    seed: str = "given"
    lhs_scale: float = 1.0

    def __post_init__(self):
        if self.c * self.dt * self.coupling.M != 1:
            raise MisalignedGridError(f"c*dt*M = {self.c * self.dt * self.coupling.M} != 1")


def front_amplitude(profile: WaveProfile) -> float:
    u = profile.values[:, 0]
    return float(u.max() - u.min())


# ==========================================
# 殘差與 Jacobian
# ==========================================
def _check_profile(profile: WaveProfile, coupling: RationalCoupling, model: ReactionModel) -> None:
    if profile.p != coupling.p:
        raise GridMismatchError(f"profile spacing 1/{profile.p} does not match p={coupling.p}")
    if profile.d != model.d:
        raise GridMismatchError(f"profile has {profile.d} components, model has {model.d}")


def _assemble(kernel, scheme, coupling, grid):
    D, bD = derivative_matrix(scheme, coupling.M, grid)
    A, bA = laplacian_matrix(kernel, grid)
    return D, bD.reshape(-1), A, bA.reshape(-1)


def residual(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme,
             coupling: RationalCoupling, r: float, profile: WaveProfile, c,
             lhs_scale: float = 1.0) -> WaveProfile:
    """逐點缺陷 lhs_scale·c𝒟_{k,M}Φ − ΔΦ − 𝒢(Φ; r)"""
    _check_profile(profile, coupling, model)
    D, bD, A, bA = _assemble(kernel, scheme, coupling, profile.grid)
    U = profile.flat()
    F = lhs_scale * float(c) * (D @ U + bD) - (A @ U + bA) - model.G(profile.values, r).reshape(-1)
    zeros = np.zeros(profile.d)
    return profile.with_values(F.reshape(profile.values.shape), P_minus=zeros, P_plus=zeros)


def linearized_operator(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme,
                        coupling: RationalCoupling, r: float, profile: WaveProfile, c,
                        lhs_scale: float = 1.0) -> sp.csr_matrix:
    """
    殘差在 profile 處的 Jacobian；在 πŪ₀、c = c̄₀ 處即為 L_{k,M}
    """
    _check_profile(profile, coupling, model)
    D, _, A, _ = _assemble(kernel, scheme, coupling, profile.grid)
    return (lhs_scale * float(c) * D - A - block_diagonal(model.DG(profile.values, r))).tocsr()


# ==========================================
# 求解
# ==========================================
@track_time("fullydiscrete")
def solve_fully_discrete_wave(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme,
                              coupling: RationalCoupling, dt, r: float, seed: WaveProfile,
                              tol: float = 1e-10, max_iter: int = 50, lhs_scale: float = 1.0,
                              threshold: float = NONTRIVIAL_THRESHOLD, seed_label: str = "given",
                              ) -> FullyDiscreteWave:
    """
    無阻尼 Newton，c = q/(pΔt)；收斂後振幅低於 threshold 視為平凡解
    """
    _check_profile(seed, coupling, model)
    if not (np.allclose(seed.P_minus, model.P_minus) and np.allclose(seed.P_plus, model.P_plus)):
        raise ValueError("seed limits do not match the model equilibria")
    dt = Fraction(dt)
    c = coupling.wavespeed(dt)
    N, d = seed.size, seed.d
    D, bD, A, bA = _assemble(kernel, scheme, coupling, seed.grid)
    cs = lhs_scale * float(c)

    def F(x):
        return cs * (D @ x + bD) - (A @ x + bA) - model.G(x.reshape(N, d), r).reshape(-1)

    def J(x):
        return cs * D - A - block_diagonal(model.DG(x.reshape(N, d), r))

    result = newton_solve(F, J, seed.flat(), tol, max_iter, damped=False, solver="fullydiscrete")
    profile = seed.with_values(result.x.reshape(N, d), q=coupling.q)
    amplitude = front_amplitude(profile)
    if amplitude < threshold:
        raise TrivialSolutionError(
            f"(p,q)=({coupling.p},{coupling.q}) r={r}: converged to a trivial profile "
            f"(amplitude {amplitude:.3e} < {threshold})", amplitude=amplitude,
        )
    logger.info("fully discrete wave (p,q)=(%d,%d) c=%s r=%.4f residual=%.2e iterations=%d",
                coupling.p, coupling.q, c, r, result.residual, result.iterations)
    return FullyDiscreteWave(coupling, scheme, dt, c, float(r), profile, result.residual,
                             amplitude, result.iterations, seed_label, lhs_scale)


def _interior(profile: WaveProfile, kernel: InteractionKernel | None, scheme: BdfScheme,
              coupling: RationalCoupling, extra: int = 0) -> slice:
    m_max = kernel.m_max if kernel is not None else 0
    margin = m_max * profile.p + scheme.k * coupling.q + extra
    if 2 * margin >= profile.size:
        raise ValueError("window too small for an interior comparison")
    return slice(margin, profile.size - margin)


def check_shift_periodicity(solution: FullyDiscreteWave, model: ReactionModel,
                            kernel: InteractionKernel | None, theta_shift=None,
                            tol: float = 1e-10, max_iter: int = 50) -> float:
    """
    從平移 theta_shift 的種子重新求解，與原解的平移比較（內部點 sup）
    """
    p = solution.coupling.p
    theta_shift = Fraction(1, p) if theta_shift is None else Fraction(theta_shift)
    steps = theta_shift * p
    if steps.denominator != 1:
        raise MisalignedGridError(f"shift {theta_shift} is not a multiple of the spacing 1/{p}")
    steps = int(steps)
    target = solution.profile.shifted(steps)
    seed = solution.profile.with_values(target)
    resolved = solve_fully_discrete_wave(
        model, kernel, solution.scheme, solution.coupling, solution.dt, solution.r, seed,
        tol=tol, max_iter=max_iter, lhs_scale=solution.lhs_scale, threshold=0.0, seed_label="shifted",
    )
    inner = _interior(solution.profile, kernel, solution.scheme, solution.coupling, abs(steps))
    return float(np.max(np.abs(resolved.profile.values[inner] - target[inner])))


# ==========================================
# 正規化與唯一性
# ==========================================
def _reference_samples(reference: SemiDiscreteWave, xi: np.ndarray):
    if reference is None:
        raise MissingContextError("normalization needs a semi-discrete reference wave")
    inside = (xi >= reference.U0.xi[0]) & (xi <= reference.U0.xi[-1])
    phi = np.zeros((xi.size, reference.U0.d))
    U0 = np.where(xi[:, None] < 0, reference.U0.P_minus, reference.U0.P_plus)
    phi[inside] = CubicSpline(reference.Phi_minus.xi, reference.Phi_minus.values, axis=0)(xi[inside])
    U0[inside] = CubicSpline(reference.U0.xi, reference.U0.values, axis=0)(xi[inside])
    return phi, U0


def normalization_functional(solution: FullyDiscreteWave | WaveProfile,
                             reference: Optional[SemiDiscreteWave], theta: float) -> float:
    """∑_ξ ⟨Φ₀⁻(ξ+θ), Ū(ξ) − Ū₀(ξ+θ)⟩"""
    profile = solution.profile if isinstance(solution, FullyDiscreteWave) else solution
    phi, U0 = _reference_samples(reference, profile.xi + theta)
    return float(np.sum(phi * (profile.values - U0)))


def locate_normalization_phase(solution: FullyDiscreteWave | WaveProfile, reference: SemiDiscreteWave,
                               bracket: tuple[float, float] | None = None, points: int = 41) -> float:
    """
    先掃描符號變化再以 brentq 求根；預設區間為 ±4 個網格格距
    """
    profile = solution.profile if isinstance(solution, FullyDiscreteWave) else solution
    lo, hi = bracket if bracket is not None else (-4.0 / profile.p, 4.0 / profile.p)
    thetas = np.linspace(lo, hi, points)
    values = np.array([normalization_functional(profile, reference, t) for t in thetas])
    roots = np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]
    if roots.size == 0:
        raise SolverError(f"normalization functional has no sign change on [{lo}, {hi}]")
    # 取最靠近 0 的根
    i = roots[np.argmin(np.abs(thetas[roots]))]
    if values[i] == 0:
        return float(thetas[i])
    return float(brentq(lambda t: normalization_functional(profile, reference, t),
                        thetas[i], thetas[i + 1], xtol=1e-14))


def uniqueness_metric(solution: FullyDiscreteWave, reference: SemiDiscreteWave, theta: float = 0.0) -> float:
    """
    p⁻¹∑[|Ū − Ū₀(·+θ)|² + |𝒟Ū − 𝒟Ū₀(·+θ)|²]
    """
    profile = solution.profile
    aligned = spline_resample(reference.U0, profile.p, profile.L, profile.extension, theta, profile.q)
    M = solution.coupling.M
    diff = profile.with_values(profile.values - aligned.values)
    D_diff = profile.with_values(
        apply_discrete_derivative(solution.scheme, M, profile).values
        - apply_discrete_derivative(solution.scheme, M, aligned).values
    )
    return inner_product_scaled(diff, diff) + inner_product_scaled(D_diff, D_diff)


def restricted_residual_study(model: ReactionModel, kernel: InteractionKernel, scheme: BdfScheme,
                              wave: SemiDiscreteWave, q: int, p_values: Sequence[int]) -> dict[int, float]:
    """
    半離散波限制到 p⁻¹ℤ 後的全離散殘差（c = c̄₀、內部點 sup），固定 q 隨 p 遞減
    """
    study = {}
    for p in p_values:
        if gcd(p, q) != 1:
            continue
        coupling = make_rational(p, q, strict=False)
        L = Fraction(int(wave.U0.L * p), p)
        restricted = spline_resample(wave.U0, p, L, q=q)
        defect = residual(model, kernel, scheme, coupling, wave.r, restricted, wave.c0, wave.lhs_scale)
        inner = _interior(restricted, kernel, scheme, coupling)
        study[p] = float(np.max(np.abs(defect.values[inner])))
        logger.debug("restricted residual p=%d q=%d: %.3e", p, q, study[p])
    return study


def save_fully_discrete(wave: FullyDiscreteWave, directory: Path, config_hash: str | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    name = f"profile_p{wave.coupling.p}_q{wave.coupling.q}_r{wave.r:.4f}.json"
    save_profile(wave.profile, directory / name, config_hash)
    doc = FullyDiscreteDocument(
        p=wave.coupling.p, q=wave.coupling.q, k=wave.scheme.k, dt=str(wave.dt), c=str(wave.c),
        r=wave.r, residual=wave.residual, front_amplitude=wave.front_amplitude,
        iterations=wave.iterations, seed=wave.seed, profile=name, config_hash=config_hash,
    )
    path = directory / name.replace("profile_", "wave_")
    path.write_text(doc.model_dump_json(indent=2))
    return path


# ==========================================
# Sweep
# ==========================================
@dataclass
class SweepResult:
    """
    lost 為沒有回傳結果的 (p, q)（任務崩潰或被中斷），其格點仍以未收斂列出
    """
    rows: list[SweepRow] = field(default_factory=list)
    lost: list[tuple[int, int]] = field(default_factory=list)
    interrupted: bool = False

    @property
    def complete(self) -> bool:
        return not self.lost and not self.interrupted

    def converged(self) -> list[SweepRow]:
        return [row for row in self.rows if row.converged]

    def multivalued(self) -> dict[float, list[float]]:
        """同一個 r 有兩個以上收斂波速的資料"""
        speeds: dict[float, set[float]] = {}
        for row in self.converged():
            speeds.setdefault(row.r, set()).add(row.c)
        return {r: sorted(c) for r, c in sorted(speeds.items()) if len(c) >= 2}

    def to_csv(self, path: Path, config_hash: str | None = None) -> Path:
        path = Path(path)
        columns = ["p", "q", "c", "r", "converged", "residual", "front_amplitude", "iters", "seed", "in_theory"]
        with path.open("w", newline="") as fh:
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(columns)
            for row in self.rows:
                data = row.model_dump()
                writer.writerow([repr(data[k]) if isinstance(data[k], float) else data[k] for k in columns])
        return path


@dataclass(frozen=True, eq=False)
class ColumnTask:
    """一組 (p, q) 的所有 r；r 由小到大以相鄰收斂解接續"""
    model: ReactionModel
    kernel: Optional[InteractionKernel]
    scheme: BdfScheme
    dt: Fraction
    p: int
    q: int
    r_values: tuple[float, ...]
    L: float
    seed_policy: tuple[str, ...]
    simulation: dict = field(default_factory=dict)
    reference: Optional[WaveProfile] = None
    extension: Extension = "neumann"
    lhs_scale: float = 1.0
    tol: float = 1e-10
    max_iter: int = 50
    threshold: float = NONTRIVIAL_THRESHOLD


def admissible_pairs(p_values: Sequence[int], q_rule: str = "theory") -> list[tuple[int, int]]:
    """theory：q ≤ p；extended：q ≤ 2p。兩者都要求 gcd(p, q) = 1"""
    if q_rule not in ("theory", "extended"):
        raise ValueError(f"unknown q_rule {q_rule!r}")
    pairs = []
    for p in p_values:
        q_max = p if q_rule == "theory" else 2 * p
        pairs += [(p, q) for q in range(1, q_max + 1) if gcd(p, q) == 1]
    return pairs


def _seed_for(task: ColumnTask, policy: str, r: float, previous: Optional[WaveProfile]) -> Optional[WaveProfile]:
    if policy == "simulation":
        trajectory = task.simulation.get(r)
        if trajectory is None:
            return None
        return profile_from_trajectory(trajectory, task.p, task.L, extension=task.extension)
    if policy == "semidiscrete":
        if task.reference is None:
            return None
        return spline_resample(task.reference, task.p, task.L, task.extension, q=task.q)
    if policy == "neighbor":
        return previous
    raise ValueError(f"unknown seed policy {policy!r}")


def unsolved_row(task: ColumnTask, r: float) -> SweepRow:
    coupling = make_rational(task.p, task.q, strict=False)
    return SweepRow(p=task.p, q=task.q, c=float(coupling.wavespeed(task.dt)), r=r, converged=False,
                    residual=float("nan"), front_amplitude=0.0, iters=0, seed="none",
                    in_theory=coupling.in_theory)


def solve_column(task: ColumnTask) -> list[SweepRow]:
    coupling = make_rational(task.p, task.q, strict=False)
    rows = []
    previous = None
    for r in task.r_values:
        row = unsolved_row(task, r)
        for policy in task.seed_policy:
            seed = _seed_for(task, policy, r, previous)
            if seed is None:
                continue
            try:
                wave = solve_fully_discrete_wave(
                    task.model, task.kernel, task.scheme, coupling, task.dt, r, seed,
                    tol=task.tol, max_iter=task.max_iter, lhs_scale=task.lhs_scale,
                    threshold=task.threshold, seed_label=policy,
                )
            except TrivialSolutionError as e:
                row = row.model_copy(update={"seed": policy, "front_amplitude": e.amplitude})
                continue
            except SolverError as e:
                logger.debug("cell (%d,%d,%.3f) seed %s failed: %s", task.p, task.q, r, policy, e)
                update = {"seed": policy}
                if hasattr(e, "iterations"):
                    update.update(iters=e.iterations, residual=e.residual)
                row = row.model_copy(update=update)
                continue
            row = row.model_copy(update={
                "converged": True, "residual": wave.residual, "front_amplitude": wave.front_amplitude,
                "iters": wave.iterations, "seed": policy,
            })
            previous = wave.profile
            break
        rows.append(row)
    return rows


def simulation_seeds(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme,
                     dt, r_values: Sequence[float], L: int, n_steps: int,
                     lhs_scale: float = 1.0) -> dict[float, Trajectory]:
    """
    每個 r 跑一次脈衝模擬，只保留最後一張快照；模擬失敗的 r 不列入
    """
    grid = lattice_grid(model, int(L))
    seeds = {}
    for r in r_values:
        U0 = pulse_initial_data(model, grid, center=int(L) // 2)
        try:
            trajectory = simulate(model, kernel, scheme, r, initial_state(U0, float(dt)), n_steps,
                                  grid, stride=n_steps, lhs_scale=lhs_scale)
        except SolverError as e:
            logger.warning("⚠️ simulation seed for r=%.3f failed: %s", r, e)
            continue
        last = Trajectory(grid, trajectory.dt, trajectory.stride,
                          trajectory.times[-1:], trajectory.snapshots[-1:])
        seeds[float(r)] = last
    return seeds


def sweep(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme, dt,
          p_values: Sequence[int], q_rule: str, r_grid: Sequence[float], L: float,
          seed_policy: Sequence[str] = ("simulation", "semidiscrete", "neighbor"),
          reference: Optional[WaveProfile] = None, simulation_steps: int = 120,
          extension: Extension = "neumann", lhs_scale: float = 1.0, tol: float = 1e-10,
          max_iter: int = 50, threshold: float = NONTRIVIAL_THRESHOLD,
          pool: Optional[CellPool] = None,
          on_column: Optional[Callable[[int, int, list[SweepRow]], None]] = None) -> SweepResult:
    """
    所有 (p, q, r) 的收斂表；每個 (p, q) 一個獨立任務，結果依 (p, q) 順序合併

    on_column(p, q, rows) 在每組 (p, q) 完成時呼叫
    """
    r_values = tuple(sorted(float(r) for r in r_grid))
    if not r_values:
        return SweepResult()
    dt = Fraction(dt)
    simulation = {}
    if "simulation" in seed_policy:
        simulation = simulation_seeds(model, kernel, scheme, dt, r_values, int(L),
                                      simulation_steps, lhs_scale)
    tasks = [
        ColumnTask(model, kernel, scheme, dt, p, q, r_values, L, tuple(seed_policy), simulation,
                   reference, extension, lhs_scale, tol, max_iter, threshold)
        for p, q in admissible_pairs(p_values, q_rule)
    ]
    logger.info("sweep: %d (p, q) columns, %d r values each", len(tasks), len(r_values))
    pool = pool or CellPool(workers=1)

    def report(index, rows):
        if on_column:
            on_column(tasks[index].p, tasks[index].q, rows)

    result = SweepResult()
    try:
        columns = pool.map(solve_column, tasks, on_result=report)
    except WorkerPoolError as e:
        logger.error("sweep stopped: %s", e)
        columns = pool.results
        result.interrupted = True
    result.interrupted = result.interrupted or not pool.running
    for task, rows in zip(tasks, columns):
        if rows is None:
            result.lost.append((task.p, task.q))
            rows = [unsolved_row(task, r) for r in task.r_values]
        for row in rows:
            if row.converged:
                status = "converged"
            elif row.front_amplitude > 0:
                status = "trivial"
            else:
                status = "failed"
            sweep_cells_total.labels(status=status).inc()
        result.rows.extend(rows)
    if result.lost:
        logger.warning("⚠️ %d (p, q) columns returned no result: %s", len(result.lost), result.lost)
    logger.info("sweep finished: %d cells, %d converged", len(result.rows), len(result.converged()))
    return result
