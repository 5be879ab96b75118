"""
ℋ_M 上的算子與其極限 - 扭轉算子、特徵矩陣、調和投影、擬逆與頻譜收斂診斷

ℋ_M 的元素以 PeriodicField.to_vector 的 j 排序表示（j = s·q + i ↔ (ζ, ξ) = (i/q, s/M)）。
扭轉 T_M 把 (i, s) 移到 (i + θq, s + n)，i 溢位時依縫合條件 Φ(ζ+1, ξ) = Φ(ζ, ξ+M⁻¹) 進位。
極限算子作用在 q 條 ζ 股線（ζ 週期 1）乘上細網格 p₀⁻¹ℤ 的函數，向量以股線為主序。
"""
import csv
import logging
from dataclasses import dataclass, replace
from fractions import Fraction
from math import gcd
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .bdf import BdfScheme, derivative_matrix
from .errors import CouplingError, GridMismatchError, MisalignedGridError, MissingContextError
from .fullydiscrete import linearized_operator
from .grid import (
    LatticeGrid,
    PeriodicField,
    RationalCoupling,
    WaveProfile,
    block_diagonal,
    hm_inner_product,
    make_rational,
    restrict,
    spline_resample,
    transverse_weights,
)
from .kernel import InteractionKernel
from .models import DiagnosticReport, ScanReport
from .newton import solve_linear
from .reaction import ReactionModel
from .semidiscrete import DELTA0, SemiDiscreteWave, stencil_matrix

logger = logging.getLogger(__name__)

KINDS = ("T_M", "Delta_M", "K_kM", "K_star_kM", "T_qtheta", "Delta_qtheta", "K_qtheta", "K_star_qtheta")
LIMIT_KINDS = ("T_qtheta", "Delta_qtheta", "K_qtheta", "K_star_qtheta")

SCAN_THRESHOLD = 1e-8


@dataclass(frozen=True, eq=False)
class TwistedOperator:
    """
    matrix @ v + offset；offset 來自視窗外的延拓值（擾動算子為 0）
    """
    kind: str
    coupling: RationalCoupling
    grid: LatticeGrid
    matrix: sp.csr_matrix
    offset: np.ndarray

    @property
    def is_limit(self) -> bool:
        return self.kind in LIMIT_KINDS

    def apply(self, vector: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(vector).reshape(-1) + self.offset

    def apply_field(self, field_: PeriodicField) -> PeriodicField:
        if self.is_limit:
            raise ValueError(f"{self.kind} acts on limit fields, not on H_M")
        out = self.apply(field_.to_vector()).reshape(-1, field_.values.shape[2])
        return PeriodicField.from_vector(out, field_.coupling, field_.s_min, field_.P_minus,
                                         field_.P_plus, field_.extension)


# ==========================================
# 扭轉索引
# ==========================================
def twist_targets(coupling: RationalCoupling, j: np.ndarray, m: int) -> np.ndarray:
    """T_M^m：(i, s) → (i + mθq, s + mn)，i 的進位加到 s"""
    q = coupling.q
    s, i = np.divmod(np.asarray(j, dtype=np.int64), q)
    carry, i_new = np.divmod(i + m * coupling.theta_steps, q)
    return (s + m * coupling.n + carry) * q + i_new


def strand_permutation(coupling: RationalCoupling, m: int) -> sp.csr_matrix:
    """(P^m V)(ζ) = V(ζ + mθ)，ζ 週期 1"""
    q = coupling.q
    i = np.arange(q)
    return sp.csr_matrix((np.ones(q), (i, (i + m * coupling.theta_steps) % q)), shape=(q, q))


def _check_hm_window(coupling: RationalCoupling, grid: LatticeGrid) -> None:
    if grid.p != coupling.p:
        raise GridMismatchError(f"grid spacing 1/{grid.p} does not match p={coupling.p}")
    if grid.lo % coupling.q or grid.hi % coupling.q:
        raise MisalignedGridError(f"window [{grid.lo}, {grid.hi}] is not aligned with q={coupling.q}")


def _require(kind: str, **context) -> None:
    missing = [name for name, value in context.items() if value is None]
    if missing:
        raise MissingContextError(f"{kind} needs {', '.join(missing)}")


# ==========================================
# 組裝
# ==========================================
def _delta_M(kernel: InteractionKernel, coupling: RationalCoupling, grid: LatticeGrid):
    N, d = grid.size, grid.d
    A = sp.csr_matrix((N * d, N * d))
    b = np.zeros((N, d))
    for m in range(1, kernel.m_max + 1):
        w = kernel.tau * kernel.alpha(m)
        if not np.any(w):
            continue
        for sign in (1, -1):
            S, ghost = grid.select(twist_targets(coupling, grid.indices, sign * m))
            A = A + grid.block(S, w)
            b += ghost * w
        A = A - sp.diags(np.tile(2.0 * w, N))
    return A.tocsr(), b.reshape(-1)


def _delta_limit(kernel: InteractionKernel, coupling: RationalCoupling, grid: LatticeGrid):
    N, d, q = grid.size, grid.d, coupling.q
    A = sp.csr_matrix((q * N * d, q * N * d))
    b = np.zeros(q * N * d)
    for m in range(1, kernel.m_max + 1):
        w = kernel.tau * kernel.alpha(m)
        if not np.any(w):
            continue
        for sign in (1, -1):
            S, ghost = grid.shift(sign * m * grid.p)
            A = A + sp.kron(strand_permutation(coupling, sign * m), grid.block(S, w), format="csr")
            b += np.tile((ghost * w).reshape(-1), q)
        A = A - sp.diags(np.tile(2.0 * w, q * N))
    return A.tocsr(), b


def _restricted_U0(wave: SemiDiscreteWave, grid: LatticeGrid) -> WaveProfile:
    if grid.lo != -grid.hi:
        raise MisalignedGridError("operator window must be symmetric to carry the wave profile")
    return spline_resample(wave.U0, grid.p, Fraction(grid.hi, grid.p), grid.extension)


def build_twisted_operator(kind: str, kernel: InteractionKernel, coupling: RationalCoupling,
                           grid: LatticeGrid, model: Optional[ReactionModel] = None,
                           scheme: Optional[BdfScheme] = None,
                           wave: Optional[SemiDiscreteWave] = None) -> TwistedOperator:
    """
    ℋ_M 類（T_M, Delta_M, K_kM, K_star_kM）：grid 是 p⁻¹ℤ 上對齊 q 的視窗
    極限類（T_qtheta, Delta_qtheta, K_qtheta, K_star_qtheta）：grid 是 ξ 細網格，K 類需與 wave.U0 同網格
    """
    if kind not in KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    N, d = grid.size, grid.d
    if kind not in LIMIT_KINDS:
        _check_hm_window(coupling, grid)
    if kind == "T_M":
        S, ghost = grid.select(twist_targets(coupling, grid.indices, 1))
        return TwistedOperator(kind, coupling, grid, grid.block(S), ghost.reshape(-1))
    if kind == "Delta_M":
        A, b = _delta_M(kernel, coupling, grid)
        return TwistedOperator(kind, coupling, grid, A, b)
    if kind == "T_qtheta":
        S, ghost = grid.shift(grid.p)
        matrix = sp.kron(strand_permutation(coupling, 1), grid.block(S), format="csr")
        return TwistedOperator(kind, coupling, grid, matrix, np.tile(ghost.reshape(-1), coupling.q))
    if kind == "Delta_qtheta":
        A, b = _delta_limit(kernel, coupling, grid)
        return TwistedOperator(kind, coupling, grid, A, b)

    _require(kind, model=model, wave=wave)
    star = kind in ("K_star_kM", "K_star_qtheta")
    c = wave.lhs_scale * wave.c0
    zero = np.zeros(N * d * (coupling.q if kind in LIMIT_KINDS else 1))
    if kind in ("K_kM", "K_star_kM"):
        _require(kind, scheme=scheme)
        D, _ = derivative_matrix(scheme, coupling.M, grid, adjoint=star)
        Delta, _ = _delta_M(kernel, coupling, grid)
        J = model.DG(_restricted_U0(wave, grid).values, wave.r)
        if star:
            J = np.swapaxes(J, -1, -2)
        return TwistedOperator(kind, coupling, grid, (c * D - Delta - block_diagonal(J)).tocsr(), zero)

    if grid.p != wave.U0.p or grid.size != wave.U0.size:
        raise GridMismatchError("limit operators live on the semi-discrete wave's grid")
    if gcd(coupling.theta_steps, coupling.q) != 1:
        raise CouplingError(f"gcd(theta*q, q) = {gcd(coupling.theta_steps, coupling.q)} != 1")
    D, _ = stencil_matrix(grid)
    Delta, _ = _delta_limit(kernel, coupling, grid)
    J = model.DG(wave.U0.values, wave.r)
    if star:
        J = np.swapaxes(J, -1, -2)
        c = -c
    local = c * D - block_diagonal(J)
    matrix = sp.kron(sp.identity(coupling.q), local, format="csr") - Delta
    return TwistedOperator(kind, coupling, grid, matrix.tocsr(), zero)


def hm_grid(coupling: RationalCoupling, half_width: int, d: int, extension="constant") -> LatticeGrid:
    """擾動用的 ℋ_M 視窗（延拓值為 0），half_width 以 p⁻¹ℤ 索引計"""
    if half_width % coupling.q:
        raise MisalignedGridError(f"half-width {half_width} is not a multiple of q={coupling.q}")
    zeros = np.zeros(d)
    return LatticeGrid(coupling.p, -half_width, half_width, zeros, zeros, extension)


def export_coo(operator: TwistedOperator, path: Path, config_hash: str | None = None) -> Path:
    """座標列表文字格式：每行 row col value"""
    path = Path(path)
    coo = operator.matrix.tocoo()
    with path.open("w") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(f"# kind={operator.kind} shape={coo.shape[0]}x{coo.shape[1]} nnz={coo.nnz}\n")
        order = np.lexsort((coo.col, coo.row))
        for i in order:
            fh.write(f"{coo.row[i]} {coo.col[i]} {coo.data[i]!r}\n")
    return path


# ==========================================
# 恆等式與不等式檢查
# ==========================================
def random_compact_vector(rng: np.random.Generator, grid: LatticeGrid, margin: int) -> np.ndarray:
    """[−1, 1] 均勻亂數，距視窗兩端 margin 格內為 0"""
    values = rng.uniform(-1.0, 1.0, size=(grid.size, grid.d))
    values[:margin] = 0.0
    values[grid.size - margin:] = 0.0
    return values


def quadratic_form_negativity(operator: TwistedOperator, kernel: InteractionKernel,
                              trials: int = 1000, seed: int = 0) -> float:
    """max ⟨Δ_MΦ, Φ⟩_{ℋ_M}，Φ 為緊支撐亂數場"""
    if operator.kind != "Delta_M":
        raise ValueError("quadratic_form_negativity needs a Delta_M operator")
    rng = np.random.default_rng(seed)
    grid = operator.grid
    s_min = grid.lo // operator.coupling.q
    margin = kernel.m_max * grid.p + 1
    worst = -np.inf
    zeros = np.zeros(grid.d)
    for _ in range(trials):
        phi = random_compact_vector(rng, grid, margin)
        image = (operator.matrix @ phi.reshape(-1)).reshape(phi.shape)
        a = PeriodicField.from_vector(image, operator.coupling, s_min, zeros, zeros)
        b = PeriodicField.from_vector(phi, operator.coupling, s_min, zeros, zeros)
        worst = max(worst, hm_inner_product(a, b))
    return float(worst)


def intertwining_defect(model: ReactionModel, kernel: InteractionKernel, scheme: BdfScheme,
                        coupling: RationalCoupling, wave: SemiDiscreteWave, half_width: int,
                        samples: int = 100, seed: int = 0) -> float:
    """
    max ‖𝒦_{k,M}𝒥V − 𝒥L_{k,M}V‖∞：扭轉索引組裝 vs p⁻¹ℤ 上的 Jacobian
    """
    grid = hm_grid(coupling, half_width, model.d, wave.U0.extension)
    K = build_twisted_operator("K_kM", kernel, coupling, grid, model, scheme, wave)
    U0 = _restricted_U0(wave, grid)
    L = linearized_operator(model, kernel, scheme, coupling, wave.r, U0, wave.c0, wave.lhs_scale)
    rng = np.random.default_rng(seed)
    margin = kernel.m_max * grid.p + scheme.k * coupling.q
    worst = 0.0
    for _ in range(samples):
        V = random_compact_vector(rng, grid, margin).reshape(-1)
        worst = max(worst, float(np.max(np.abs(K.apply(V) - L @ V))))
    return worst


# ==========================================
# 特徵矩陣與雙曲性
# ==========================================
@dataclass(frozen=True, eq=False)
class CharacteristicContext:
    """
    Δ_{ρ;λ}(iy) = c̄₀iy + 2τA(y) − D𝒢_ρ + λ；給定 coupling 時為 (q·d) 維的扭轉版本
    """
    model: ReactionModel
    kernel: InteractionKernel
    c0: float
    r: float
    rho: float = 0.0
    lam: complex = 0.0
    coupling: Optional[RationalCoupling] = None
    lhs_scale: float = 1.0

    def dg_rho(self) -> np.ndarray:
        """D𝒢_ρ = ρD𝒢(P⁻) + (1−ρ)D𝒢(P⁺)"""
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must lie in [0, 1], got {self.rho}")
        return (self.rho * self.model.DG(self.model.P_minus, self.r)
                + (1.0 - self.rho) * self.model.DG(self.model.P_plus, self.r))

    @property
    def dim(self) -> int:
        return self.model.d * (1 if self.coupling is None else self.coupling.q)


def characteristic_matrices(ctx: CharacteristicContext, ys: np.ndarray) -> np.ndarray:
    """逐點的特徵矩陣，形狀 (len(ys), dim, dim)"""
    ys = np.atleast_1d(np.asarray(ys, dtype=float))
    d = ctx.model.d
    c = ctx.lhs_scale * ctx.c0
    base = -ctx.dg_rho().astype(complex)
    diag = 1j * c * ys + ctx.lam
    if ctx.coupling is None:
        out = np.broadcast_to(base, (ys.size, d, d)).copy()
        out += diag[:, None, None] * np.eye(d)
        m = np.arange(1, ctx.kernel.m_max + 1)
        A = (1.0 - np.cos(np.outer(ys, m))) @ ctx.kernel.coefficients
        idx = np.arange(d)
        out[:, idx, idx] += 2.0 * ctx.kernel.tau * A
        return out
    q = ctx.coupling.q
    eye_q = np.eye(q)
    out = np.broadcast_to(np.kron(eye_q, base), (ys.size, q * d, q * d)).copy()
    out += diag[:, None, None] * np.eye(q * d)
    for m in range(1, ctx.kernel.m_max + 1):
        w = np.diag(ctx.kernel.tau * ctx.kernel.alpha(m))
        if not np.any(w):
            continue
        forward = np.kron(strand_permutation(ctx.coupling, m).toarray(), w)
        backward = np.kron(strand_permutation(ctx.coupling, -m).toarray(), w)
        phase = np.exp(1j * m * ys)[:, None, None]
        out -= phase * forward + np.conj(phase) * backward - 2.0 * np.kron(eye_q, w)
    return out


def characteristic_matrix(ctx: CharacteristicContext, y: float) -> np.ndarray:
    return characteristic_matrices(ctx, np.array([y]))[0]


def symbol_periodicity_defect(ctx: CharacteristicContext, ys: np.ndarray) -> float:
    """
    max |Δ(y+2π) − Δ(y) − 2πic̄₀I|；核符號部分精確 2π 週期
    """
    ys = np.asarray(ys, dtype=float)
    shift = 2j * np.pi * ctx.lhs_scale * ctx.c0 * np.eye(ctx.dim)
    diff = characteristic_matrices(ctx, ys + 2 * np.pi) - characteristic_matrices(ctx, ys) - shift
    return float(np.max(np.abs(diff)))


def scan_extent(ctx: CharacteristicContext) -> float:
    """
    |y| > Y 時 |c̄₀y| 壓過其餘各項，行列式不可能為 0；c̄₀ = 0 時只需掃一個週期
    """
    c = abs(ctx.lhs_scale * ctx.c0)
    if c < 1e-14:
        return float(np.pi)
    bound = (4.0 * ctx.kernel.tau * float(np.abs(ctx.kernel.coefficients).sum(axis=0).max())
             + max(np.linalg.norm(ctx.model.DG(P, ctx.r), 2) for P in (ctx.model.P_minus, ctx.model.P_plus))
             + abs(ctx.lam) + 1.0)
    return float(max(np.pi, bound / c))


def det_table(ctx: CharacteristicContext, y_grid: Optional[np.ndarray] = None,
              rho_grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
              points_per_period: int = 1024) -> np.ndarray:
    """
    每列 (y, ρ, Re det, Im det)
    """
    if y_grid is None:
        Y = scan_extent(ctx)
        n = int(np.ceil(2 * Y / (2 * np.pi) * points_per_period)) + 1
        y_grid = np.linspace(-Y, Y, n)
    y_grid = np.asarray(y_grid, dtype=float)
    if y_grid.size == 0 or len(rho_grid) == 0:
        raise ValueError("scan grids must be nonempty")
    rows = []
    for rho in rho_grid:
        dets = np.linalg.det(characteristic_matrices(replace(ctx, rho=float(rho)), y_grid))
        rows.append(np.column_stack([y_grid, np.full(y_grid.size, float(rho)), dets.real, dets.imag]))
    return np.vstack(rows)


def _segment_distance(z: np.ndarray) -> float:
    """折線 z_0 → z_1 → … 到原點的最小距離"""
    if z.size == 1:
        return float(abs(z[0]))
    a, b = z[:-1], z[1:]
    seg = b - a
    length2 = np.abs(seg) ** 2
    t = np.where(length2 > 0, -np.real(np.conj(a) * seg) / np.where(length2 > 0, length2, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    return float(np.min(np.abs(a + t * seg)))


def summarize_scan(table: np.ndarray, threshold: float = SCAN_THRESHOLD) -> ScanReport:
    dets = table[:, 2] + 1j * table[:, 3]
    k = int(np.argmin(np.abs(dets)))
    distance = min(_segment_distance(dets[table[:, 1] == rho]) for rho in np.unique(table[:, 1]))
    min_abs = float(np.abs(dets[k]))
    return ScanReport(
        min_abs_det=min_abs,
        argmin_y=float(table[k, 0]),
        argmin_rho=float(table[k, 1]),
        min_curve_distance=distance,
        threshold=threshold,
        passed=bool(min_abs > threshold and distance > threshold),
        points=int(table.shape[0]),
    )


def hyperbolicity_scan(ctx: CharacteristicContext, y_grid: Optional[np.ndarray] = None,
                       rho_grid: Sequence[float] = (0.0, 0.25, 0.5, 0.75, 1.0),
                       lam: Optional[complex] = None, threshold: float = SCAN_THRESHOLD,
                       points_per_period: int = 1024) -> ScanReport:
    """min |det Δ_{ρ;λ}(iy)|，另以折線距離排除取樣點之間穿過 0 的情形"""
    if lam is not None:
        ctx = replace(ctx, lam=lam)
    report = summarize_scan(det_table(ctx, y_grid, rho_grid, points_per_period), threshold)
    logger.info("hyperbolicity scan: min|det|=%.3e at y=%.4f rho=%.2f (%s)", report.min_abs_det,
                report.argmin_y, report.argmin_rho, "pass" if report.passed else "fail")
    return report


def export_scan_csv(table: np.ndarray, path: Path, config_hash: str | None = None) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["y", "rho", "abs_det"])
        for y, rho, re, im in table:
            writer.writerow([repr(float(y)), repr(float(rho)), repr(float(np.hypot(re, im)))])
    return path


# ==========================================
# 調和投影
# ==========================================
def harmonic_projection(theta_field: np.ndarray, n: int, coupling: RationalCoupling) -> np.ndarray:
    """
    [Π_nΘ](ξ) = ∑_{n'} ζ_q^{n·n'} Θ(n'θ, ξ)；theta_field 形狀 (q, N, d)，第一軸是 ζ = i/q
    """
    q = coupling.q
    if not 0 <= n < q:
        raise ValueError(f"harmonic index {n} outside 0..{q - 1}")
    if gcd(coupling.theta_steps, q) != 1:
        raise CouplingError(f"gcd(theta*q, q) = {gcd(coupling.theta_steps, q)} != 1")
    theta_field = np.asarray(theta_field)
    if theta_field.shape[0] != q:
        raise GridMismatchError(f"expected {q} strands, got {theta_field.shape[0]}")
    k = np.arange(q)
    strands = (k * coupling.theta_steps) % q
    weights = np.exp(2j * np.pi * n * k / q)
    return np.tensordot(weights, theta_field[strands], axes=1)


def modulated_projection(theta_field: np.ndarray, n: int, coupling: RationalCoupling,
                         xi: np.ndarray) -> np.ndarray:
    """X_n(ξ) = e^{−2πinξ/q}[Π_nΘ](ξ)"""
    phase = np.exp(-2j * np.pi * n * np.asarray(xi) / coupling.q)
    return phase[:, None] * harmonic_projection(theta_field, n, coupling)


def limit_field(vector: np.ndarray, operator: TwistedOperator) -> np.ndarray:
    """極限算子的向量 → (q, N, d)"""
    return np.asarray(vector).reshape(operator.coupling.q, operator.grid.size, operator.grid.d)


@dataclass(frozen=True)
class LimitKernelCheck:
    sigma_min: float
    sigma_second: float
    norm: float
    dimension: int
    mismatch: float

    @property
    def passed(self) -> bool:
        return self.dimension == 1 and self.mismatch < 1e-6


def limit_kernel_check(model: ReactionModel, kernel: InteractionKernel, coupling: RationalCoupling,
                       wave: SemiDiscreteWave, kernel_tol: float = 1e-6) -> LimitKernelCheck:
    """
    視窗截斷的 𝒦̄_{q,θ} 的數值核維度，以及核向量與 π⊥Φ₀⁺ 的差距（正規化、取號後）
    """
    operator = build_twisted_operator("K_qtheta", kernel, coupling, wave.U0.grid, model, wave=wave)
    _, s, Vh = la.svd(operator.matrix.toarray())
    norm = float(s[0])
    dimension = int(np.sum(s < kernel_tol * norm))
    target = np.tile(wave.Phi_plus.flat(), coupling.q)
    target /= np.linalg.norm(target)
    v = Vh[-1]
    mismatch = float(min(np.linalg.norm(v - target), np.linalg.norm(v + target)))
    logger.info("limit kernel (q=%d): sigma_min=%.3e second=%.3e dim=%d mismatch=%.2e",
                coupling.q, s[-1], s[-2], dimension, mismatch)
    return LimitKernelCheck(float(s[-1]), float(s[-2]), norm, dimension, mismatch)


def limit_resolvent_ratios(model: ReactionModel, kernel: InteractionKernel, coupling: RationalCoupling,
                           wave: SemiDiscreteWave, deltas: Sequence[float], samples: int = 10,
                           seed: int = 0) -> dict[float, float]:
    """
    ‖[𝒦̄_{q,θ}+δ]⁻¹Θ‖_{H¹} / (‖Θ‖ + δ⁻¹|⟨Θ, π⊥Φ₀⁻⟩|) 的最大值；擬合常數 C 取各 δ 的最大值
    """
    operator = build_twisted_operator("K_qtheta", kernel, coupling, wave.U0.grid, model, wave=wave)
    grid = operator.grid
    q = coupling.q
    weight = 1.0 / (q * grid.p)
    D, _ = stencil_matrix(grid)
    D = sp.kron(sp.identity(q), D, format="csr")
    phi = np.tile(wave.Phi_minus.flat(), q)
    rng = np.random.default_rng(seed)
    margin = kernel.m_max * grid.p + 2
    K = operator.matrix.toarray()
    ratios = {}
    for delta in deltas:
        worst = 0.0
        for _ in range(samples):
            theta = np.concatenate([random_compact_vector(rng, grid, margin).reshape(-1) for _ in range(q)])
            V = la.solve(K + delta * np.eye(K.shape[0]), theta)
            h1 = np.sqrt(weight * (V @ V + (D @ V) @ (D @ V)))
            denom = np.sqrt(weight * theta @ theta) + abs(weight * theta @ phi) / delta
            worst = max(worst, float(h1 / denom))
        ratios[float(delta)] = worst
    return ratios


# ==========================================
# 擬逆與頻譜收斂
# ==========================================
@dataclass(frozen=True, eq=False)
class QuasiInverse:
    gamma: float
    V: WaveProfile
    ratio: float


def _y1_norm(profile: WaveProfile, scheme: BdfScheme, coupling: RationalCoupling) -> float:
    D, _ = derivative_matrix(scheme, coupling.M, profile.grid)
    v = profile.flat()
    return float(np.sqrt((v @ v + (D @ v) @ (D @ v)) / profile.p))


def quasi_inverse_solve(model: ReactionModel, kernel: InteractionKernel, scheme: BdfScheme,
                        coupling: RationalCoupling, wave: SemiDiscreteWave, psi: WaveProfile) -> QuasiInverse:
    """
    [[L_{k,M}, −π𝒟Ū₀], [⟨πΦ₀⁻, ·⟩, 0]] [V; γ] = [Ψ; 0]
    """
    if psi.p != coupling.p:
        raise GridMismatchError(f"Psi spacing 1/{psi.p} does not match p={coupling.p}")
    U0 = spline_resample(wave.U0, psi.p, psi.L, psi.extension, q=coupling.q)
    phi = spline_resample(wave.Phi_minus, psi.p, psi.L, psi.extension, q=coupling.q).flat()
    L = linearized_operator(model, kernel, scheme, coupling, wave.r, U0, wave.c0, wave.lhs_scale)
    D, bD = derivative_matrix(scheme, coupling.M, U0.grid)
    b = D @ U0.flat() + bD.reshape(-1)
    bordered = sp.bmat([[L, sp.csr_matrix(-b[:, None])], [sp.csr_matrix(phi[None, :] / psi.p), None]],
                       format="csc")
    x = solve_linear(bordered, np.append(psi.flat(), 0.0))
    zeros = np.zeros(psi.d)
    V = psi.with_values(x[:-1].reshape(psi.values.shape), P_minus=zeros, P_plus=zeros)
    gamma = float(x[-1])
    psi_norm = float(np.sqrt(psi.flat() @ psi.flat() / psi.p))
    ratio = (abs(gamma) + _y1_norm(V, scheme, coupling)) / psi_norm if psi_norm > 0 else 0.0
    return QuasiInverse(gamma, V, float(ratio))


def random_bump_function(rng: np.random.Generator, d: int, L: float, bumps: int = 5) -> Callable:
    """幾個高斯凸塊的和，中心落在 [−L/2, L/2]"""
    centers = rng.uniform(-L / 2, L / 2, size=bumps)
    amplitudes = rng.uniform(-1.0, 1.0, size=(bumps, d))
    widths = rng.uniform(0.5, 2.0, size=bumps)

    def f(xi):
        xi = np.asarray(xi, dtype=float)
        g = np.exp(-((xi[:, None] - centers) / widths) ** 2)
        return g @ amplitudes
    return f


def quasi_inverse_ratio_study(model: ReactionModel, kernel: InteractionKernel, scheme: BdfScheme,
                              wave: SemiDiscreteWave, q: int, p_values: Sequence[int], L: int,
                              samples: int = 5, seed: int = 0) -> dict[float, float]:
    """同一組隨機 Ψ（連續函數）在不同 M 上的最大穩定比"""
    rng = np.random.default_rng(seed)
    functions = [random_bump_function(rng, model.d, L) for _ in range(samples)]
    zeros = np.zeros(model.d)
    study = {}
    for p in p_values:
        coupling = make_rational(p, q, strict=False)
        worst = 0.0
        for f in functions:
            psi = restrict(f, p, L, zeros, zeros, wave.U0.extension, q)
            worst = max(worst, quasi_inverse_solve(model, kernel, scheme, coupling, wave, psi).ratio)
        study[float(coupling.M)] = worst
    return study


def spectral_convergence_diagnostic(operator: TwistedOperator, wave: SemiDiscreteWave, scheme: BdfScheme,
                                    delta: float, delta0: float = DELTA0) -> float:
    """
    min ‖(𝒦+δ)Φ‖² + δ⁻²⟨πΦ₀∓, (𝒦+δ)Φ⟩²，限制 ‖Φ‖²_{ℋ¹_{k,M}} = 1；回傳平方根
    （與原泛函相差至多 √2 倍）
    """
    if operator.kind not in ("K_kM", "K_star_kM"):
        raise ValueError("the diagnostic needs a K_kM or K_star_kM operator")
    if not 0 < delta < delta0:
        raise ValueError(f"delta must lie in (0, {delta0}), got {delta}")
    adjoint = operator.kind == "K_star_kM"
    grid = operator.grid
    p = grid.p
    reference = wave.Phi_plus if adjoint else wave.Phi_minus
    phi = spline_resample(reference, p, Fraction(grid.hi, p), grid.extension).flat()
    n = operator.matrix.shape[0]
    K = operator.matrix.toarray() + delta * np.eye(n)
    D, _ = derivative_matrix(scheme, operator.coupling.M, grid)
    D = D.toarray()
    projection = (phi @ K) / p
    A = K.T @ K / p + np.outer(projection, projection) / delta ** 2
    N = (np.eye(n) + D.T @ D) / p
    value = la.eigh(A, N, subset_by_index=[0, 0], eigvals_only=True)[0]
    return float(np.sqrt(max(value, 0.0)))


def spectral_convergence_study(operator: TwistedOperator, wave: SemiDiscreteWave, scheme: BdfScheme,
                               deltas: Sequence[float], delta0: float = DELTA0,
                               config_hash: str | None = None) -> DiagnosticReport:
    estimates = [spectral_convergence_diagnostic(operator, wave, scheme, d, delta0) for d in deltas]
    kappa = min(estimates) if estimates else float("nan")
    if estimates and kappa <= 0:
        logger.warning("⚠️ spectral convergence estimate vanished (kappa_hat=%.3e)", kappa)
    return DiagnosticReport(deltas=[float(d) for d in deltas], estimates=estimates, kappa_hat=kappa,
                            adjoint=operator.kind == "K_star_kM", config_hash=config_hash)


# ==========================================
# 內插
# ==========================================
@dataclass(frozen=True, eq=False)
class FieldInterpolant:
    """
    ξ 方向的內插：order 0 取左端 φ(ζ, ξ⁻)，order 1 為 ξ⁻、ξ⁺ 之間的線性內插；
    格點上 ξ⁻(ξ) = ξ
    """
    field_: PeriodicField
    order: int

    def __post_init__(self):
        if self.order not in (0, 1):
            raise ValueError("interpolation order must be 0 or 1")

    def __call__(self, xi) -> np.ndarray:
        """回傳形狀 (q+1, len(xi), d)"""
        M = float(self.field_.coupling.M)
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        s = np.floor(np.round(xi * M, 12)).astype(np.int64)
        local = s - self.field_.s_min
        last = self.field_.n_strips - 1
        if np.any(local < 0) or np.any(local > last):
            raise ValueError("query outside the field window")
        left = self.field_.values[:, local]
        if self.order == 0:
            return left
        weight = xi * M - s
        if np.any((local == last) & (weight > 1e-12)):
            raise ValueError("query outside the field window")
        right = self.field_.values[:, np.minimum(local + 1, last)]
        return left + weight[None, :, None] * (right - left)


def interpolate(field_: PeriodicField, order: int) -> FieldInterpolant:
    return FieldInterpolant(field_, order)


# ==========================================
# Δ_M → Δ_{q,θ}
# ==========================================
def bump_field(mu: float = 2.0, d: int = 1) -> Callable:
    """Z(ζ, ξ) = (1 + ½cos 2πζ)·exp(−1/(1 − (ξ/μ)²))，支撐在 |ξ| < μ"""
    def Z(zeta, xi):
        zeta = np.asarray(zeta, dtype=float)
        x = np.asarray(xi, dtype=float) / mu
        inside = np.abs(x) < 1
        bump = np.zeros_like(x)
        bump[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
        value = (1.0 + 0.5 * np.cos(2 * np.pi * zeta)) * bump
        return np.repeat(value[..., None], d, axis=-1)
    return Z


@dataclass(frozen=True)
class LimitProbe:
    M: tuple[float, ...]
    norms: tuple[float, ...]
    tail_bound: float


def laplacian_limit_probe(kernel: InteractionKernel, Z: Callable, q: int, theta_steps: int,
                          support: float, exponents: Sequence[int] = range(1, 7),
                          couplings: Optional[Sequence[RationalCoupling]] = None) -> LimitProbe:
    """
    直接求值 ‖Δ_{M_j}Z − Δ_{q,θ}Z‖_{ℋ_{M_j}}

    預設序列 p_j = jq + θq 取 j = 4^k（k ∈ exponents，預設 k = 1..6），
    不是 j = 1..6。
    其他 j 以 couplings 直接傳入，每個 coupling 的 q 與 θ 必須相同
    """
    if couplings is None:
        couplings = [make_rational(4 ** k * q + theta_steps, q) for k in exponents]
    theta = Fraction(theta_steps, q)
    for coupling in couplings:
        if coupling.q != q or coupling.theta != theta:
            raise CouplingError(f"coupling {coupling.p}/{coupling.q} has theta={coupling.theta}, expected {theta}")
    reach = support + kernel.m_max + 1
    w = transverse_weights(q)
    norms = []
    for coupling in couplings:
        M = float(coupling.M)
        S = int(np.ceil(reach * M))
        s = np.arange(-S, S + 1)
        i = np.arange(q + 1)
        I, Sg = np.meshgrid(i, s, indexing="ij")
        zeta, xi = I / q, Sg / M
        base = Z(zeta, xi)
        diff = np.zeros_like(base)
        for m in range(1, kernel.m_max + 1):
            a = kernel.tau * kernel.alpha(m)
            if not np.any(a):
                continue
            for sign in (1, -1):
                carry, i_new = np.divmod(I + sign * m * coupling.theta_steps, q)
                s_new = Sg + sign * m * coupling.n + carry
                twisted = Z(i_new / q, s_new / M)
                limit = Z(np.mod(zeta + sign * m * float(theta), 1.0), xi + sign * m)
                diff += a * (twisted - limit)
        total = np.einsum("i,is->", w, np.sum(diff ** 2, axis=-1)) / M
        norms.append(float(np.sqrt(total)))
    z_norm = float(np.sqrt(np.sum(Z(np.zeros(2001), np.linspace(-support, support, 2001)) ** 2)
                           * (2 * support / 2000)))
    tail = 4.0 * kernel.tau * kernel.tail_bound * z_norm
    logger.debug("laplacian limit probe norms: %s", norms)
    return LimitProbe(tuple(float(c.M) for c in couplings), tuple(norms), tail)


