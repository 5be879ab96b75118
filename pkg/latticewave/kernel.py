"""
無窮範圍交互作用核 - 建構、(HS1) 檢查與非局部拉普拉斯算子

α_m 為對角矩陣，以長度 d 的向量儲存；係數在 m_max 處截斷並記錄尾項上界。
"""
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import LatticeGrid, WaveProfile
from .models import Hs1Report, KernelDocument

logger = logging.getLogger(__name__)

# 直接求和的停止門檻
SERIES_CUTOFF = 1e-16


@dataclass(frozen=True, eq=False)
class InteractionKernel:
    """
    τ∑_{m>0} α_m[U(ξ+m) + U(ξ−m) − 2U(ξ)] 的係數資料

    coefficients 形狀為 (m_max, d)，第 m−1 列是 α_m 的對角元素
    """
    d: int
    d_diff: int
    coefficients: np.ndarray
    tau: float
    nu: float = 1.0
    tail_bound: float = 0.0
    tail_tol: float = 1e-14

    def __post_init__(self):
        if self.d < 1 or not 1 <= self.d_diff <= self.d:
            raise ValueError(f"need 1 <= d_diff <= d, got d={self.d}, d_diff={self.d_diff}")
        if self.tau <= 0 or self.nu <= 0:
            raise ValueError("tau and nu must be positive")
        coefficients = np.array(self.coefficients, dtype=float).reshape(-1, self.d)
        if np.any(coefficients[:, self.d_diff:] != 0):
            raise ValueError("non-diffusive components must have zero coupling")
        coefficients.setflags(write=False)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def m_max(self) -> int:
        return self.coefficients.shape[0]

    def alpha(self, m: int) -> np.ndarray:
        if not 1 <= m <= self.m_max:
            return np.zeros(self.d)
        return self.coefficients[m - 1]

    def normalization_residual(self) -> np.ndarray:
        m2 = np.arange(1, self.m_max + 1) ** 2
        return np.abs(m2 @ self.coefficients[:, : self.d_diff] - 1.0)

    def decay_sum(self) -> float:
        weights = np.exp(self.nu * np.arange(1, self.m_max + 1))
        return float(weights @ np.abs(self.coefficients).max(axis=1)) if self.m_max else 0.0


# ==========================================
# 建構
# ==========================================
def build_gaussian_kernel(d: int, d_diff: int, tau: float, tail_tol: float = 1e-14) -> InteractionKernel:
    """
    α_m = e^{−m²}/S，S = ∑_{j≥1} j² e^{−j²}（直接求和到項 < 1e−16）
    """
    terms = []
    m = 1
    while True:
        term = m * m * np.exp(-m * m)
        terms.append(term)
        if term < SERIES_CUTOFF:
            break
        m += 1
    terms = np.array(terms)
    S = float(terms.sum())
    # tail_after[m-1] = ∑_{j>m} j² e^{−j²} / S
    tail_after = (terms[::-1].cumsum()[::-1] - terms) / S
    m_max = int(np.argmax(tail_after < tail_tol)) + 1
    m_range = np.arange(1, m_max + 1)
    column = np.exp(-(m_range.astype(float) ** 2)) / S

    beyond = np.arange(m_max + 1, m_max + 40, dtype=float)
    nu = 1.0
    tail_bound = max(float(tail_after[m_max - 1]) + 2 * terms[-1] / S,
                     float(np.sum(np.exp(-beyond ** 2 + nu * beyond)) / S))

    coefficients = np.zeros((m_max, d))
    coefficients[:, :d_diff] = column[:, None]
    logger.debug("gaussian kernel: S=%.17g, m_max=%d, tail=%.3e", S, m_max, tail_bound)
    return InteractionKernel(d, d_diff, coefficients, float(tau), nu, tail_bound, tail_tol)


def build_nearest_neighbor_kernel(d: int, d_diff: int, tau: float) -> InteractionKernel:
    coefficients = np.zeros((1, d))
    coefficients[0, :d_diff] = 1.0
    return InteractionKernel(d, d_diff, coefficients, float(tau))


def kernel_from_coefficients(coefficients, tau: float, d_diff: int | None = None,
                             nu: float = 1.0, tail_bound: float = 0.0,
                             tail_tol: float = 1e-14) -> InteractionKernel:
    """
    自訂核：coefficients 為 (m_max, d) 陣列或 α_m 對角元素的列表
    """
    coefficients = np.atleast_2d(np.asarray(coefficients, dtype=float))
    d = coefficients.shape[1]
    return InteractionKernel(d, d if d_diff is None else d_diff, coefficients, float(tau),
                             nu, tail_bound, tail_tol)


# ==========================================
# 符號 A_i(z)
# ==========================================
def symbol(kernel: InteractionKernel, i: int, z):
    """
    A_i(z) = ∑_m α_m^{(i,i)}(1 − cos(mz))，i 為 0 起算的擴散分量索引
    """
    if not 0 <= i < kernel.d_diff:
        raise IndexError(f"component {i} is not diffusive (d_diff={kernel.d_diff})")
    z = np.asarray(z, dtype=float)
    m = np.arange(1, kernel.m_max + 1)
    values = (1.0 - np.cos(np.multiply.outer(z, m))) @ kernel.coefficients[:, i]
    return float(values) if values.ndim == 0 else values


def symbol_matrix(kernel: InteractionKernel, y: float) -> np.ndarray:
    """diag(A_1(y), ..., A_d(y))，非擴散分量為 0"""
    m = np.arange(1, kernel.m_max + 1)
    return np.diag((1.0 - np.cos(m * y)) @ kernel.coefficients)


def check_hs1(kernel: InteractionKernel, z_samples: int = 64, tol: float = 1e-12) -> Hs1Report:
    """
    (HS1) 檢查：正性、m² 正規化、指數尾項

    取樣點為 (0, 2π) 內 z_samples 個均勻內點，另加 2πk/m（m ≤ m_max），
    非負係數下 A_i 的零點只可能落在這些點上。
    """
    if z_samples < 16:
        raise ValueError("z_samples must be at least 16")
    z = 2 * np.pi * np.arange(1, z_samples + 1) / (z_samples + 1)
    extra = [2 * np.pi * k / m for m in range(2, kernel.m_max + 1) for k in range(1, m)]
    z = np.unique(np.concatenate([z, np.array(extra, dtype=float)]))

    min_symbol = [float(np.min(symbol(kernel, i, z))) for i in range(kernel.d_diff)]
    residual = kernel.normalization_residual().tolist()
    diffusive = kernel.coefficients[:, : kernel.d_diff]
    structure_ok = bool(np.all(kernel.coefficients[:, kernel.d_diff:] == 0)
                        and kernel.m_max > 0 and np.all(np.any(diffusive != 0, axis=0)))
    return Hs1Report(
        min_symbol=min_symbol,
        normalization_residual=residual,
        decay_sum=kernel.decay_sum(),
        tail_bound=kernel.tail_bound,
        structure_ok=structure_ok,
        positivity_ok=all(v > tol for v in min_symbol),
        normalization_ok=all(v < tol for v in residual),
        tail_ok=bool(np.isfinite(kernel.decay_sum()) and kernel.tail_bound <= kernel.tail_tol),
    )


# ==========================================
# 非局部拉普拉斯算子
# ==========================================
def laplacian_matrix(kernel: InteractionKernel | None, grid: LatticeGrid) -> tuple[sp.csr_matrix, np.ndarray]:
    """
    Δ₀ 在視窗上的表示：ΔU = A @ U.flat + b.flat（延拓規則決定 b）
    """
    N, d = grid.size, grid.d
    A = sp.csr_matrix((N * d, N * d))
    b = np.zeros((N, d))
    if kernel is None:
        return A, b
    for m in range(1, kernel.m_max + 1):
        w = kernel.tau * kernel.alpha(m)
        if not np.any(w):
            continue
        for offset in (m * grid.p, -m * grid.p):
            S, ghost = grid.shift(offset)
            A = A + grid.block(S, w)
            b += ghost * w
        A = A - sp.diags(np.tile(2.0 * w, N))
    return A.tocsr(), b


def apply_nonlocal_laplacian(kernel: InteractionKernel, profile: WaveProfile) -> WaveProfile:
    if profile.L < kernel.m_max:
        raise ValueError(
            f"window [-{profile.L}, {profile.L}] is shorter than 2*m_max = {2 * kernel.m_max}"
        )
    A, b = laplacian_matrix(kernel, profile.grid)
    values = (A @ profile.flat()).reshape(profile.size, profile.d) + b
    return profile.with_values(values)


# ==========================================
# JSON 序列化
# ==========================================
def kernel_to_json(kernel: InteractionKernel) -> str:
    doc = KernelDocument(
        d=kernel.d,
        d_diff=kernel.d_diff,
        tau=kernel.tau,
        nu=kernel.nu,
        m_max=kernel.m_max,
        coefficients=kernel.coefficients.tolist(),
        tail_bound=kernel.tail_bound,
        tail_tol=kernel.tail_tol,
    )
    return doc.model_dump_json()


def kernel_from_json(text: str) -> InteractionKernel:
    doc = KernelDocument.model_validate_json(text)
    coefficients = np.array(doc.coefficients, dtype=float).reshape(doc.m_max, doc.d)
    return InteractionKernel(doc.d, doc.d_diff, coefficients, doc.tau, doc.nu,
                             doc.tail_bound, doc.tail_tol)
