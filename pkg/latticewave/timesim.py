"""
隱式 BDF 時間步進 - 產生脈衝種子並量測經驗波速

格點 j ∈ ℤ ∩ [−L, L]，邊界使用 Neumann ghost（最近點複製）。
k ≥ 2 時以低階 BDF 逐步爬升暖機：第 n 步使用 min(k, n+1) 階。
"""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .bdf import BdfScheme, bdf_scheme
from .errors import NoCrossingError
from .grid import Extension, LatticeGrid, WaveProfile, block_diagonal, window_half_width
from .kernel import InteractionKernel, laplacian_matrix
from .metrics import track_time
from .models import WavespeedReport
from .newton import newton_solve
from .reaction import ReactionModel

logger = logging.getLogger(__name__)

STEP_TOL = 1e-11


@dataclass(frozen=True, eq=False)
class SimulationState:
    """
    U 形狀 (N, d)；history 由舊到新，最後一個等於 U，長度不超過 k
    """
    U: np.ndarray
    history: tuple[np.ndarray, ...]
    t: float
    dt: float
    steps: int = 0


@dataclass
class Trajectory:
    grid: LatticeGrid
    dt: float
    stride: int
    times: list[float] = field(default_factory=list)
    snapshots: list[np.ndarray] = field(default_factory=list)

    def record(self, state: SimulationState) -> None:
        self.times.append(state.t)
        self.snapshots.append(state.U.copy())


def lattice_grid(model: ReactionModel, L: int, extension: Extension = "neumann") -> LatticeGrid:
    return LatticeGrid(1, -int(L), int(L), model.P_minus, model.P_plus, extension)


def initial_state(U0: np.ndarray, dt: float, history: Optional[Sequence[np.ndarray]] = None,
                  t0: float = 0.0) -> SimulationState:
    """
    history 給定時（由舊到新、不含 U0）視為精確的過去值，略過暖機
    """
    U0 = np.atleast_2d(np.asarray(U0, dtype=float))
    if U0.shape[0] == 1 and U0.shape[1] > 1:
        U0 = U0.T
    past = tuple(np.asarray(h, dtype=float).reshape(U0.shape) for h in (history or ()))
    return SimulationState(U0, past + (U0,), float(t0), float(dt), 0)


# ==========================================
# 單步
# ==========================================
def step(state: SimulationState, model: ReactionModel, kernel: InteractionKernel | None,
         scheme: BdfScheme, r: float, grid: LatticeGrid, lhs_scale: float = 1.0,
         tol: float = STEP_TOL, max_iter: int = 20) -> SimulationState:
    """
    β⁻¹Δt⁻¹ ∑ μ_{n'} W(t_{n+1} − (k−n')Δt) = ΔW + G(W; r)，以前一步為初始猜測
    """
    k_eff = min(scheme.k, len(state.history))
    local = scheme if k_eff == scheme.k else bdf_scheme(k_eff)
    mu = local.mu_float
    scale = lhs_scale / (float(local.beta) * state.dt)
    N, d = state.U.shape
    A, bA = laplacian_matrix(kernel, grid)
    bA = bA.reshape(-1)
    past = state.history[-k_eff:]
    memory = sum(m * h.reshape(-1) for m, h in zip(mu[:-1], past))

    def residual(x):
        G = model.G(x.reshape(N, d), r).reshape(-1)
        return scale * (mu[-1] * x + memory) - (A @ x + bA) - G

    def jacobian(x):
        return scale * mu[-1] * sp.identity(N * d, format="csr") - A \
            - block_diagonal(model.DG(x.reshape(N, d), r))

    result = newton_solve(residual, jacobian, state.U.reshape(-1), tol, max_iter, solver="timestep")
    W = result.x.reshape(N, d)
    history = (state.history + (W,))[-scheme.k:]
    return SimulationState(W, history, state.t + state.dt, state.dt, state.steps + 1)


@track_time("timestep")
def simulate(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme, r: float,
             state: SimulationState, n_steps: int, grid: LatticeGrid, stride: int = 1,
             lhs_scale: float = 1.0, tol: float = STEP_TOL) -> Trajectory:
    """
    執行 n_steps 步，每 stride 步（含初始狀態）記錄一次快照
    """
    if state.U.shape != (grid.size, grid.d):
        raise ValueError(f"state shape {state.U.shape} does not match the grid ({grid.size}, {grid.d})")
    trajectory = Trajectory(grid, state.dt, stride)
    trajectory.record(state)
    for n in range(1, n_steps + 1):
        state = step(state, model, kernel, scheme, r, grid, lhs_scale, tol)
        if n % stride == 0 or n == n_steps:
            trajectory.record(state)
    logger.info("simulated %d steps of BDF%d (dt=%s, %d snapshots)",
                n_steps, scheme.k, state.dt, len(trajectory.snapshots))
    return trajectory


def warmup_discrepancy(model: ReactionModel, kernel: InteractionKernel | None, scheme: BdfScheme,
                       r: float, exact, grid: LatticeGrid, dt: float, n_steps: int = 10) -> float:
    """
    比較兩種啟動方式在 n_steps 步後的差距：低階爬升 vs 由 exact(t) 給定的精確歷史
    """
    past = [exact(-(scheme.k - 1 - i) * dt) for i in range(scheme.k - 1)]
    U0 = exact(0.0)
    laddered = simulate(model, kernel, scheme, r, initial_state(U0, dt), n_steps, grid, n_steps)
    seeded = simulate(model, kernel, scheme, r, initial_state(U0, dt, past), n_steps, grid, n_steps)
    return float(np.max(np.abs(laddered.snapshots[-1] - seeded.snapshots[-1])))


# ==========================================
# 初始條件
# ==========================================
def pulse_initial_data(model: ReactionModel, grid: LatticeGrid, width: int = 10, center: int = 0,
                       amplitude: float = 1.0, refractory: float = 0.15) -> np.ndarray:
    """
    局部激發：u 在 [center − width, center] 上設為 amplitude；
    多分量模型在右側同寬區域設定 w = refractory，讓脈衝只往左傳播
    """
    U = np.tile(model.P_minus, (grid.size, 1))
    j = grid.indices
    excited = (j >= center - width) & (j <= center)
    U[excited, 0] = amplitude
    if model.d > 1:
        U[(j > center) & (j <= center + width), 1] = refractory
    return U


def front_initial_data(model: ReactionModel, grid: LatticeGrid, width: float = 2.0,
                       center: float = 0.0) -> np.ndarray:
    """P⁻ 到 P⁺ 的 tanh 波前"""
    s = 0.5 * (1.0 + np.tanh((grid.xi - center) / width))
    return model.P_minus + np.outer(s, model.P_plus - model.P_minus)


# ==========================================
# 波速量測
# ==========================================
def crossing_position(u: np.ndarray, level: float, grid: LatticeGrid) -> float:
    """最左側的 level 穿越點（線性內插，ξ 座標）"""
    diff = np.asarray(u, dtype=float) - level
    hits = np.nonzero((diff[:-1] * diff[1:] < 0) | (diff[:-1] == 0))[0]
    if hits.size == 0:
        raise NoCrossingError(f"no crossing of level {level} in the window")
    j = hits[0]
    frac = 0.0 if diff[j] == 0 else diff[j] / (diff[j] - diff[j + 1])
    return float((grid.lo + j + frac) / grid.p)


def measure_wavespeed(trajectory: Trajectory, level: float = 0.5, component: int = 0,
                      config_hash: str | None = None) -> WavespeedReport:
    """
    後半段快照的穿越點位置對時間做最小平方擬合

    speed 為位置斜率；U_j(t) = Φ(j + ct) 的 c 是 profile_speed = −speed
    """
    times = np.asarray(trajectory.times, dtype=float)
    start = len(times) // 2
    if len(times) - start < 2:
        raise NoCrossingError("need at least two snapshots in the final half to fit a speed")
    positions = []
    for U in trajectory.snapshots[start:]:
        x = crossing_position(U[:, component], level, trajectory.grid)
        edge = 1.0 / trajectory.grid.p
        if x <= trajectory.grid.lo / trajectory.grid.p + edge or x >= trajectory.grid.hi / trajectory.grid.p - edge:
            raise NoCrossingError(f"front at {x:.3f} has left the window")
        positions.append(x)
    t = times[start:]
    slope, intercept = np.polyfit(t, positions, 1)
    fit = float(np.max(np.abs(slope * t + intercept - np.asarray(positions))))
    logger.info("measured speed %.6f (profile speed %.6f, fit residual %.2e)", slope, -slope, fit)
    return WavespeedReport(speed=float(slope), profile_speed=float(-slope), fit_residual=fit,
                           window=(float(t[0]), float(t[-1])), config_hash=config_hash)


def profile_from_trajectory(trajectory: Trajectory, p: int, L, level: float = 0.5,
                            component: int = 0, snapshot: int = -1,
                            extension: Extension = "neumann") -> WaveProfile:
    """
    把快照搬到共動座標 ξ = j − x*(t)（x* 為穿越點），再以線性內插取樣到 p⁻¹ℤ ∩ [−L, L]
    """
    grid = trajectory.grid
    U = trajectory.snapshots[snapshot]
    shift = crossing_position(U[:, component], level, grid)
    xi_src = grid.xi - shift
    J = window_half_width(p, L)
    xi = np.arange(-J, J + 1) / p
    values = np.column_stack([
        np.interp(xi, xi_src, U[:, i], left=grid.P_minus[i], right=grid.P_plus[i])
        for i in range(grid.d)
    ])
    return WaveProfile(values, p, J, grid.P_minus, grid.P_plus, extension)


def export_trajectory_csv(trajectory: Trajectory, path: Path, config_hash: str | None = None) -> Path:
    path = Path(path)
    d = trajectory.grid.d
    with path.open("w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["t", "xi"] + [f"u{i}" for i in range(d)])
        for t, U in zip(trajectory.times, trajectory.snapshots):
            for x, row in zip(trajectory.grid.xi, U):
                writer.writerow([repr(float(t)), repr(float(x))] + [repr(float(v)) for v in row])
    return path
