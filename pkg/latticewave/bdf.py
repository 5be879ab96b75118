"""
BDF 格式與離散導數 𝒟_{k,M}、𝒟*_{k,M}

係數以 Fraction 精確儲存，只在套用時轉為浮點數。
"""
import logging
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import MisalignedGridError
from .grid import LatticeGrid, WaveProfile

logger = logging.getLogger(__name__)

# μ_{0;k}..μ_{k;k} 與 β_k
_TABLE = {
    1: (("-1", "1"), "1"),
    2: (("1/3", "-4/3", "1"), "2/3"),
    3: (("-2/11", "9/11", "-18/11", "1"), "6/11"),
    4: (("3/25", "-16/25", "36/25", "-48/25", "1"), "12/25"),
    5: (("-12/137", "75/137", "-200/137", "300/137", "-300/137", "1"), "60/137"),
    6: (("10/147", "-72/147", "225/147", "-400/147", "450/147", "-360/147", "1"), "60/147"),
}


@dataclass(frozen=True)
class BdfScheme:
    k: int
    mu: tuple[Fraction, ...]
    beta: Fraction

    def __post_init__(self):
        if len(self.mu) != self.k + 1:
            raise ValueError(f"BDF{self.k} needs {self.k + 1} coefficients, got {len(self.mu)}")

    @property
    def mu_float(self) -> np.ndarray:
        return np.array([float(m) for m in self.mu])

    def consistency(self) -> tuple[Fraction, Fraction]:
        """(∑μ, ∑nμ_n − β)，兩者都應精確為 0"""
        return sum(self.mu, Fraction(0)), sum((n * m for n, m in enumerate(self.mu)), Fraction(0)) - self.beta


def bdf_scheme(k: int) -> BdfScheme:
    if k not in _TABLE:
        raise ValueError(f"BDF order must be in 1..6, got {k}")
    mu, beta = _TABLE[k]
    return BdfScheme(k, tuple(Fraction(m) for m in mu), Fraction(beta))


def derive_bdf_coefficients(k: int) -> BdfScheme:
    """
    對節點 t_{n'} = n' − k 的 k 次插值多項式在 t = 0 微分，
    以最新節點的係數正規化為 1
    """
    if k < 1:
        raise ValueError("order must be positive")
    nodes = [Fraction(n - k) for n in range(k + 1)]
    weights = []
    for a, ta in enumerate(nodes):
        # ℓ_a'(0) = ∑_{b≠a} 1/(ta − tb) ∏_{c≠a,b} (0 − tc)/(ta − tc)
        total = Fraction(0)
        for b, tb in enumerate(nodes):
            if b == a:
                continue
            term = Fraction(1) / (ta - tb)
            for c, tc in enumerate(nodes):
                if c in (a, b):
                    continue
                term *= (0 - tc) / (ta - tc)
            total += term
        weights.append(total)
    lead = weights[-1]
    return BdfScheme(k, tuple(w / lead for w in weights), 1 / lead)


# ==========================================
# 離散導數
# ==========================================
def step_offset(M, p: int) -> int:
    """M⁻¹ 在 p⁻¹ℤ 上的索引偏移，必須是整數"""
    step = Fraction(p) / Fraction(M)
    if step.denominator != 1 or step <= 0:
        raise MisalignedGridError(f"M^-1 = 1/{M} is not a multiple of the grid spacing 1/{p}")
    return int(step)


def _targets(scheme: BdfScheme, step: int, at, adjoint: bool) -> np.ndarray:
    sign = 1 if adjoint else -1
    lags = np.array([scheme.k - n for n in range(scheme.k + 1)])
    return np.add.outer(np.atleast_1d(at), sign * lags * step)


def discrete_derivative(scheme: BdfScheme, M, profile: WaveProfile, at: int) -> np.ndarray:
    """
    [𝒟_{k,M}Φ](ξ_at) = β⁻¹M ∑ μ_{n'} Φ(ξ − (k−n')M⁻¹)；at 為網格索引
    """
    step = step_offset(M, profile.p)
    samples = profile.sample(_targets(scheme, step, at, adjoint=False)[0])
    return float(Fraction(M) / scheme.beta) * (scheme.mu_float @ samples)


def adjoint_discrete_derivative(scheme: BdfScheme, M, profile: WaveProfile, at: int) -> np.ndarray:
    step = step_offset(M, profile.p)
    samples = profile.sample(_targets(scheme, step, at, adjoint=True)[0])
    return float(Fraction(M) / scheme.beta) * (scheme.mu_float @ samples)


def derivative_matrix(scheme: BdfScheme, M, grid: LatticeGrid,
                      adjoint: bool = False) -> tuple[sp.csr_matrix, np.ndarray]:
    """
    𝒟_{k,M}（或 𝒟*）在視窗上的表示：𝒟U = D @ U.flat + b.flat
    """
    step = step_offset(M, grid.p)
    scale = float(Fraction(M) / scheme.beta)
    sign = 1 if adjoint else -1
    N, d = grid.size, grid.d
    D = sp.csr_matrix((N * d, N * d))
    b = np.zeros((N, d))
    for n, mu in enumerate(scheme.mu_float):
        S, ghost = grid.shift(sign * (scheme.k - n) * step)
        D = D + grid.block(S) * (scale * mu)
        b += ghost * (scale * mu)
    return D.tocsr(), b


def apply_discrete_derivative(scheme: BdfScheme, M, profile: WaveProfile,
                              adjoint: bool = False) -> WaveProfile:
    D, b = derivative_matrix(scheme, M, profile.grid, adjoint)
    values = (D @ profile.flat()).reshape(profile.size, profile.d) + b
    return profile.with_values(values)


# ==========================================
# 收斂階數與穩定性
# ==========================================
@dataclass(frozen=True)
class ConvergenceProbe:
    M: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float

    def passes(self, l: int, exact_tol: float = 1e-13) -> bool:
        if max(self.errors) < exact_tol:
            return True
        return self.slope >= l - 0.1


def convergence_order_probe(scheme: BdfScheme, f: Callable[[np.ndarray], np.ndarray],
                            df: Callable[[np.ndarray], np.ndarray], M_list: Sequence,
                            l: int | None = None, window: tuple[float, float] = (-1.0, 1.0)) -> ConvergenceProbe:
    """
    sup_{ξ∈window∩p⁻¹ℤ} |𝒟_{k,M}f − f'|，斜率由 log-log 最小平方擬合
    """
    l = scheme.k if l is None else l
    if l > scheme.k:
        raise ValueError(f"order {l} exceeds the scheme order {scheme.k}")
    errors = []
    for M in M_list:
        M = Fraction(M)
        p = M.numerator
        xi = np.arange(int(np.ceil(window[0] * p)), int(np.floor(window[1] * p)) + 1) / p
        lags = np.array([(scheme.k - n) for n in range(scheme.k + 1)]) / float(M)
        samples = f(np.subtract.outer(xi, lags))
        approx = float(M / scheme.beta) * (samples @ scheme.mu_float)
        errors.append(float(np.max(np.abs(approx - df(xi)))))
    Ms = np.array([float(Fraction(M)) for M in M_list])
    errs = np.array(errors)
    if np.all(errs > 0) and len(Ms) > 1:
        slope = float(-np.polyfit(np.log(Ms), np.log(errs), 1)[0])
    else:
        slope = float("inf")
    logger.debug("BDF%d convergence probe: errors=%s slope=%.3f", scheme.k, errors, slope)
    return ConvergenceProbe(tuple(Ms), tuple(errors), slope)


def dahlquist_roots(scheme: BdfScheme, z: complex) -> np.ndarray:
    """
    測試方程 v' = λv（z = λΔt）的特徵根：∑μ_{n'}ζ^{n'} − zβζ^k = 0
    """
    coeffs = np.array([complex(m) for m in scheme.mu], dtype=complex)
    coeffs[-1] -= z * float(scheme.beta)
    return np.roots(coeffs[::-1])
