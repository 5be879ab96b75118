"""
半離散行波 - 求解 MFDE c̄₀Ū₀′ = Δ₀Ū₀ + 𝒢(Ū₀; r)，組裝 L₀ 並檢查核與頻譜間隙

未知量為細網格 p₀⁻¹ℤ 上的 Ū₀ 與波速 c；ξ 導數用四階中央差分，
位移 m 是精確的索引偏移 m·p₀。平移不變性以相位條件 ⟨seed′, U − seed⟩ = 0 去除。
"""
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import (
    KernelDimensionError,
    MissingContextError,
    NonSimpleKernelError,
    SpectralGapError,
    WaveSpeedVanishedError,
)
from .grid import (
    Extension,
    LatticeGrid,
    WaveProfile,
    block_diagonal,
    inner_product_scaled,
    restrict,
    save_profile,
)
from .kernel import InteractionKernel, laplacian_matrix
from .metrics import track_time
from .models import WaveDocument
from .newton import newton_solve, solve_linear
from .reaction import ReactionModel

logger = logging.getLogger(__name__)

# 四階中央差分：U′(j) ≈ p₀/12 · (U_{j−2} − 8U_{j−1} + 8U_{j+1} − U_{j+2})
STENCIL = ((-2, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0))

KERNEL_TOL = 1e-6
DELTA0 = 0.1


@dataclass(frozen=True, eq=False)
class SemiDiscreteWave:
    """
    (c̄₀, Ū₀, Φ₀⁺, Φ₀⁻, λ̃) 資料包；所有剖面在同一個 p₀⁻¹ℤ 視窗上
    """
    c0: float
    U0: WaveProfile
    Phi_plus: WaveProfile
    Phi_minus: WaveProfile
    lambda_tilde: float
    residual: float
    r: float
    iterations: int = 0
    sigma_min: float = float("nan")
    sigma_gap: float = float("nan")
    lhs_scale: float = 1.0

    @property
    def p0(self) -> int:
        return self.U0.p

    def pairing(self) -> float:
        return inner_product_scaled(self.Phi_plus, self.Phi_minus)


@dataclass(frozen=True, eq=False)
class WaveSpectrum:
    kernel: np.ndarray
    cokernel: np.ndarray
    sigma_min: float
    sigma_gap: float
    lambda_tilde: float
    eigenvalues: np.ndarray


# ==========================================
# 離散算子
# ==========================================
def stencil_matrix(grid: LatticeGrid) -> tuple[sp.csr_matrix, np.ndarray]:
    """四階中央差分在視窗上的表示：U′ = D @ U.flat + b.flat"""
    N, d = grid.size, grid.d
    D = sp.csr_matrix((N * d, N * d))
    b = np.zeros((N, d))
    scale = grid.p / 12.0
    for offset, weight in STENCIL:
        S, ghost = grid.shift(offset)
        D = D + grid.block(S) * (scale * weight)
        b += ghost * (scale * weight)
    return D.tocsr(), b


def stencil_derivative(profile: WaveProfile) -> WaveProfile:
    D, b = stencil_matrix(profile.grid)
    values = (D @ profile.flat()).reshape(profile.size, profile.d) + b
    return profile.with_values(values, P_minus=np.zeros(profile.d), P_plus=np.zeros(profile.d))


def _perturbation_grid(grid: LatticeGrid) -> LatticeGrid:
    """線性化算子作用在擾動上：常數延拓時 ghost 值為 0"""
    zeros = np.zeros(grid.d)
    return LatticeGrid(grid.p, grid.lo, grid.hi, zeros, zeros, grid.extension)


# ==========================================
# 初始猜測
# ==========================================
def tanh_front_seed(model: ReactionModel, kernel: InteractionKernel, r: float, p0: int, L,
                    extension: Extension = "constant", lhs_scale: float = 1.0,
                    center: float = 0.0) -> tuple[WaveProfile, float]:
    """
    連續 Nagumo 波前 1/(1 + e^{−ξ/√(2τ)}) 連接 P⁻ 與 P⁺，
    波速猜測 c = √(2τ)(1/2 − r)/lhs_scale
    """
    if model.is_pulse():
        raise MissingContextError(
            f"model {model.name!r} has P- == P+; a pulse needs a profile seed from time simulation"
        )
    width = np.sqrt(2.0 * kernel.tau)

    def front(xi):
        s = 1.0 / (1.0 + np.exp(-(xi - center) / width))
        return model.P_minus + np.outer(s, model.P_plus - model.P_minus)

    seed = restrict(front, p0, L, model.P_minus, model.P_plus, extension)
    return seed, float(width * (0.5 - r) / lhs_scale)


# ==========================================
# 求解
# ==========================================
@track_time("semidiscrete")
def solve_semidiscrete_wave(model: ReactionModel, kernel: InteractionKernel, r: float, p0: int, L,
                            seed: WaveProfile | None = None, c_guess: float | None = None,
                            extension: Extension = "constant", lhs_scale: float = 1.0,
                            tol: float = 1e-10, max_iter: int = 50, damped: bool = True,
                            c_min: float = 1e-6, compute_spectrum: bool = True) -> SemiDiscreteWave:
    """
    Newton 求解 lhs_scale·c·U′ = Δ₀U + 𝒢(U; r) 與相位條件，未知量 (U, c)

    seed 為 None 時使用 tanh 波前（僅限 P⁻ ≠ P⁺ 的模型）
    """
    if seed is None:
        seed, guess = tanh_front_seed(model, kernel, r, p0, L, extension, lhs_scale)
        c_guess = guess if c_guess is None else c_guess
    if seed.p != p0 or seed.L != L:
        raise ValueError(f"seed lives on p={seed.p}, L={seed.L}; expected p={p0}, L={L}")
    if not (np.allclose(seed.P_minus, model.P_minus) and np.allclose(seed.P_plus, model.P_plus)):
        raise ValueError("seed limits do not match the model equilibria")
    if c_guess is None:
        raise MissingContextError("a profile seed needs an initial wavespeed guess")

    grid = LatticeGrid(p0, -seed.half_width, seed.half_width, model.P_minus, model.P_plus, extension)
    N, d = grid.size, grid.d
    D, bD = stencil_matrix(grid)
    A, bA = laplacian_matrix(kernel, grid)
    bD, bA = bD.reshape(-1), bA.reshape(-1)
    seed_flat = seed.values.reshape(-1)
    seed_prime = (D @ seed_flat + bD) / p0

    def split(x):
        return x[:-1], x[-1]

    def residual(x):
        U, c = split(x)
        G = model.G(U.reshape(N, d), r).reshape(-1)
        F = lhs_scale * c * (D @ U + bD) - (A @ U + bA) - G
        return np.append(F, seed_prime @ (U - seed_flat))

    def jacobian(x):
        U, c = split(x)
        J = lhs_scale * c * D - A - block_diagonal(model.DG(U.reshape(N, d), r))
        column = sp.csr_matrix((lhs_scale * (D @ U + bD))[:, None])
        return sp.bmat([[J, column], [sp.csr_matrix(seed_prime[None, :]), None]], format="csc")

    x0 = np.append(seed_flat, c_guess)
    result = newton_solve(residual, jacobian, x0, tol, max_iter, damped, solver="semidiscrete")
    U, c = split(result.x)
    if abs(c) < c_min:
        raise WaveSpeedVanishedError(f"wavespeed converged to {c:.3e}; the wave is pinned", c=float(c))

    U0 = seed.with_values(U.reshape(N, d), extension=extension)
    logger.info("semi-discrete wave: r=%.4f c0=%.8f residual=%.2e iterations=%d",
                r, c, result.residual, result.iterations)
    wave = SemiDiscreteWave(float(c), U0, U0, U0, float("nan"), result.residual, float(r),
                            result.iterations, lhs_scale=lhs_scale)
    if not compute_spectrum:
        return wave
    return attach_spectrum(wave, model, kernel)


def assemble_L0(wave: SemiDiscreteWave, model: ReactionModel, kernel: InteractionKernel) -> sp.csr_matrix:
    """
    L₀ = c̄₀∂_ξ − Δ₀ − D𝒢(Ū₀; r)，導數與求解器同一模板，作用在擾動上
    """
    grid = _perturbation_grid(wave.U0.grid)
    D, _ = stencil_matrix(grid)
    A, _ = laplacian_matrix(kernel, grid)
    DG = block_diagonal(model.DG(wave.U0.values, wave.r))
    return (wave.lhs_scale * wave.c0 * D - A - DG).tocsr()


def compute_wave_spectrum(L0, adjoint: bool = False, kernel_tol: float = KERNEL_TOL,
                          n_report: int = 6) -> WaveSpectrum:
    """
    最小奇異向量給出核（adjoint=True 時交換左右），λ̃ 取非核特徵值的最小實部
    """
    L = L0.toarray() if sp.issparse(L0) else np.asarray(L0)
    if adjoint:
        L = L.T
    U, s, Vh = la.svd(L)
    norm = s[0]
    sigma_min, sigma_gap = float(s[-1]), float(s[-2])
    if not (sigma_min < kernel_tol * norm < sigma_gap):
        raise KernelDimensionError(
            f"expected a one-dimensional kernel: sigma_min={sigma_min:.3e}, "
            f"second={sigma_gap:.3e}, threshold={kernel_tol * norm:.3e}"
        )
    eigenvalues = la.eigvals(L)
    order = np.argsort(np.abs(eigenvalues))
    rest = eigenvalues[order[1:]]
    rest = rest[np.argsort(rest.real)]
    lambda_tilde = float(rest[0].real) if rest.size else float("inf")
    if lambda_tilde <= 0:
        logger.warning("⚠️ non-kernel eigenvalue with real part %.3e <= 0 on the window", lambda_tilde)
    return WaveSpectrum(Vh[-1], U[:, -1], sigma_min, sigma_gap, lambda_tilde, rest[:n_report])


def attach_spectrum(wave: SemiDiscreteWave, model: ReactionModel, kernel: InteractionKernel) -> SemiDiscreteWave:
    """
    計算 Φ₀⁺、Φ₀⁻ 並正規化：Φ₀⁺ 以最小平方貼合 Ū₀′，⟨Φ₀⁺, Φ₀⁻⟩ = 1
    """
    spectrum = compute_wave_spectrum(assemble_L0(wave, model, kernel))
    v, u = spectrum.kernel, spectrum.cokernel
    if abs(v @ u) < 1e-8:
        raise NonSimpleKernelError(f"<Phi+, Phi-> = {v @ u:.3e}: the zero eigenvalue is not simple")
    derivative = stencil_derivative(wave.U0).flat()
    phi_plus = v * (v @ derivative)
    zeros = np.zeros(wave.U0.d)
    Phi_plus = wave.U0.with_values(phi_plus.reshape(wave.U0.values.shape), P_minus=zeros, P_plus=zeros)
    pairing = (phi_plus @ u) / wave.p0
    Phi_minus = Phi_plus.with_values((u / pairing).reshape(wave.U0.values.shape))
    return SemiDiscreteWave(wave.c0, wave.U0, Phi_plus, Phi_minus, spectrum.lambda_tilde,
                            wave.residual, wave.r, wave.iterations, spectrum.sigma_min,
                            spectrum.sigma_gap, wave.lhs_scale)


# ==========================================
# 事後檢查
# ==========================================
def mfde_residual(wave: SemiDiscreteWave, model: ReactionModel, kernel: InteractionKernel) -> np.ndarray:
    grid = wave.U0.grid
    D, bD = stencil_matrix(grid)
    A, bA = laplacian_matrix(kernel, grid)
    U = wave.U0.flat()
    F = (wave.lhs_scale * wave.c0 * (D @ U + bD.reshape(-1)) - (A @ U + bA.reshape(-1))
         - model.G(wave.U0.values, wave.r).reshape(-1))
    return F.reshape(wave.U0.values.shape)


def tail_decay_rates(wave: SemiDiscreteWave, floor: float = 1e-12) -> tuple[float, float]:
    """
    外側四分之一視窗上 log|Ū₀ − P±| 的線性擬合斜率（左側取正、右側取負號後回傳）；
    誤差已低於 floor 時回傳 inf
    """
    xi = wave.U0.xi
    L = float(wave.U0.L)
    rates = []
    for side, limit in ((-1, wave.U0.P_minus), (1, wave.U0.P_plus)):
        mask = side * xi >= 0.75 * L
        dist = np.linalg.norm(wave.U0.values[mask] - limit, axis=1)
        keep = dist > floor
        if keep.sum() < 3:
            rates.append(float("inf"))
            continue
        slope = np.polyfit(xi[mask][keep], np.log(dist[keep]), 1)[0]
        rates.append(float(-side * slope))
    return rates[0], rates[1]


def kernel_derivative_mismatch(wave: SemiDiscreteWave) -> float:
    """‖Φ₀⁺ − Ū₀′‖∞ / ‖Ū₀′‖∞"""
    derivative = stencil_derivative(wave.U0).values
    return float(np.max(np.abs(wave.Phi_plus.values - derivative)) / np.max(np.abs(derivative)))


def spectral_periodicity_report(wave: SemiDiscreteWave, model: ReactionModel,
                                kernel: InteractionKernel, n_eigs: int = 6) -> float:
    """
    以 e^{2πiξ} 共軛後的算子減去 2πic̄₀，比較低頻特徵值；只回報差距，不做斷言
    """
    L = assemble_L0(wave, model, kernel).toarray().astype(complex)
    phase = np.repeat(np.exp(2j * np.pi * wave.U0.xi), wave.U0.d)
    conjugated = (L * phase[None, :]) / phase[:, None]
    conjugated -= 2j * np.pi * wave.lhs_scale * wave.c0 * np.eye(L.shape[0])
    base = la.eigvals(L)
    moved = la.eigvals(conjugated)
    low = base[np.argsort(np.abs(base))[:n_eigs]]
    return float(max(np.min(np.abs(moved - mu)) for mu in low))


def lambda_tilde_window_study(model: ReactionModel, kernel: InteractionKernel, r: float, p0: int,
                              windows=(40, 80), **solve_kwargs) -> dict[float, float]:
    """不同視窗長度下的 λ̃ 估計"""
    study = {}
    for L in windows:
        wave = solve_semidiscrete_wave(model, kernel, r, p0, L, **solve_kwargs)
        study[float(L)] = wave.lambda_tilde
        logger.info("window L=%s: lambda_tilde=%.6f", L, wave.lambda_tilde)
    return study


def detuning_study(model: ReactionModel, kernel: InteractionKernel, r_values, p0: int, L,
                   **solve_kwargs) -> dict[float, float]:
    """
    c̄₀ 對 r 的變化；前一個 r 的解作為下一個的種子
    """
    study = {}
    seed, c_guess = None, None
    for r in sorted(r_values):
        wave = solve_semidiscrete_wave(model, kernel, r, p0, L, seed, c_guess,
                                       compute_spectrum=False, **solve_kwargs)
        study[float(r)] = wave.c0
        seed, c_guess = wave.U0, wave.c0
        logger.debug("detuning r=%.4f: c0=%.6f", r, wave.c0)
    return study


# ==========================================
# 預解式分解
# ==========================================
def _real_vector(z: np.ndarray) -> np.ndarray:
    # 實特徵值的特徵向量只差一個複數相位
    k = int(np.argmax(np.abs(z)))
    return (z * np.conj(z[k]) / abs(z[k])).real


def zero_eigenpair(wave: SemiDiscreteWave, model: ReactionModel,
                   kernel: InteractionKernel) -> tuple[float, np.ndarray, np.ndarray]:
    """
    L₀ 最接近 0 的特徵值 μ₀ 與左右特徵向量 (u, v)；有限視窗上 μ₀ 只是近似 0
    """
    L = assemble_L0(wave, model, kernel).toarray()
    eigenvalues, left, right = la.eig(L, left=True, right=True)
    i = int(np.argmin(np.abs(eigenvalues)))
    mu = eigenvalues[i]
    if abs(mu.imag) > 1e-10 * max(1.0, abs(mu.real)):
        raise NonSimpleKernelError(f"eigenvalue closest to 0 is not real: {mu}")
    v, u = _real_vector(right[:, i]), _real_vector(left[:, i])
    if abs(u @ v) < 1e-8 * np.linalg.norm(u) * np.linalg.norm(v):
        raise NonSimpleKernelError(f"left/right eigenvectors nearly orthogonal at mu={mu.real:.3e}")
    return float(mu.real), v, u


def resolvent_paths(wave: SemiDiscreteWave, model: ReactionModel, kernel: InteractionKernel,
                    delta: float, G, delta0: float = DELTA0) -> tuple[np.ndarray, np.ndarray]:
    """
    回傳 ((L₀+δ)⁻¹G 直接解, (μ₀+δ)⁻¹PG + [I + δL_q]⁻¹L_qG 分解解)

    P = v uᵀ/(uᵀv) 是 μ₀ 的譜投影，L_q 由 L₀ − μ₀P 的加邊系統得到；μ₀ = 0 時即 δ⁻¹⟨Φ₀⁻, G⟩Φ₀⁺
    """
    if not 0 < delta < delta0:
        raise ValueError(f"delta must lie in (0, {delta0}), got {delta}")
    G = G.flat() if isinstance(G, WaveProfile) else np.asarray(G, dtype=float).reshape(-1)
    L = assemble_L0(wave, model, kernel).toarray()
    n = L.shape[0]
    try:
        direct = la.solve(L + delta * np.eye(n), G)
    except la.LinAlgError as e:
        raise SpectralGapError(f"L0 + delta is singular at delta={delta}") from e

    mu, v, u = zero_eigenpair(wave, model, kernel)
    P = np.outer(v, u) / (u @ v)
    kernel_part = P @ G / (mu + delta)
    bordered = np.zeros((n + 1, n + 1))
    bordered[:n, :n] = L - mu * P
    bordered[:n, n] = v
    bordered[n, :n] = u
    try:
        inverse = la.inv(bordered)
    except la.LinAlgError as e:
        raise SpectralGapError("bordered system for the quasi-inverse is singular") from e
    L_q = inverse[:n, :n]
    range_part = solve_linear(np.eye(n) + delta * L_q, L_q @ G)
    return direct, kernel_part + range_part


def resolvent_decomposition_check(wave: SemiDiscreteWave, model: ReactionModel, kernel: InteractionKernel,
                                  delta: float, G, delta0: float = DELTA0) -> float:
    direct, decomposed = resolvent_paths(wave, model, kernel, delta, G, delta0)
    return float(np.linalg.norm(direct - decomposed) / np.linalg.norm(direct))


# ==========================================
# 輸出
# ==========================================
def save_wave(wave: SemiDiscreteWave, directory: Path, config_hash: str | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = {"U0": "U0.json", "Phi_plus": "Phi_plus.json", "Phi_minus": "Phi_minus.json"}
    for attr, name in names.items():
        save_profile(getattr(wave, attr), directory / name, config_hash)
    doc = WaveDocument(
        c0=wave.c0, r=wave.r, residual=wave.residual, lambda_tilde=wave.lambda_tilde,
        p0=wave.p0, iterations=wave.iterations, sigma_min=wave.sigma_min,
        sigma_gap=wave.sigma_gap, profiles=names, config_hash=config_hash,
    )
    path = directory / "wave.json"
    path.write_text(doc.model_dump_json(indent=2))
    return path
