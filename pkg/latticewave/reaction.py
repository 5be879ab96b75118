"""
反應項 𝒢(U; r) - FitzHugh-Nagumo、Nagumo 與純量線性測試問題

G 與 DG 以封閉形式成對提供，並對輸入的前導維度向量化：
U 形狀 (..., d) → G 形狀 (..., d)、DG 形狀 (..., d, d)。
模組層級函式搭配 functools.partial，讓模型可以被 pickle 給 worker 行程。
"""
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional

import numpy as np

from .models import Hs2Report, Hs3Report, JacobianReport

logger = logging.getLogger(__name__)

# 對稱部分正定的判斷門檻
PD_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class ReactionModel:
    """
    自訂模型：提供向量化的 G(U, r)、DG(U, r) 與平衡點 P±
    """
    name: str
    d: int
    d_diff: int
    G: Callable[[np.ndarray, float], np.ndarray]
    DG: Callable[[np.ndarray, float], np.ndarray]
    P_minus: np.ndarray
    P_plus: np.ndarray
    gamma_cross: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "P_minus", np.atleast_1d(np.asarray(self.P_minus, dtype=float)))
        object.__setattr__(self, "P_plus", np.atleast_1d(np.asarray(self.P_plus, dtype=float)))

    def is_pulse(self) -> bool:
        return bool(np.array_equal(self.P_minus, self.P_plus))


# ==========================================
# 內建模型
# ==========================================
def _cubic(u, r):
    return u * (1.0 - u) * (u - r)


def _cubic_prime(u, r):
    return -3.0 * u * u + 2.0 * (1.0 + r) * u - r


def _fhn_G(U, r, rho, gamma):
    U = np.asarray(U, dtype=float)
    u, w = U[..., 0], U[..., 1]
    return np.stack([_cubic(u, r) - w, rho * (u - gamma * w)], axis=-1)


def _fhn_DG(U, r, rho, gamma):
    U = np.asarray(U, dtype=float)
    u = U[..., 0]
    J = np.zeros(U.shape + (2,))
    J[..., 0, 0] = _cubic_prime(u, r)
    J[..., 0, 1] = -1.0
    J[..., 1, 0] = rho
    J[..., 1, 1] = -rho * gamma
    return J


def _nagumo_G(U, r):
    return _cubic(np.asarray(U, dtype=float), r)


def _nagumo_DG(U, r):
    U = np.asarray(U, dtype=float)
    return _cubic_prime(U, r)[..., None]


def _linear_G(U, r, lam):
    return lam * np.asarray(U, dtype=float)


def _linear_DG(U, r, lam):
    U = np.asarray(U, dtype=float)
    return np.full(U.shape + (1,), float(lam))


def fhn_model(rho: float, gamma: float) -> ReactionModel:
    """
    G(u, w; r) = (u(1−u)(u−r) − w, ρ(u − γw))，P± = (0, 0)，Γ = 1/ρ
    """
    if rho <= 0 or gamma <= 0:
        raise ValueError("rho and gamma must be positive")
    return ReactionModel(
        name="fhn",
        d=2,
        d_diff=1,
        G=partial(_fhn_G, rho=rho, gamma=gamma),
        DG=partial(_fhn_DG, rho=rho, gamma=gamma),
        P_minus=np.zeros(2),
        P_plus=np.zeros(2),
        gamma_cross=1.0 / rho,
        params={"rho": rho, "gamma": gamma},
    )


def nagumo_model() -> ReactionModel:
    return ReactionModel(
        name="nagumo",
        d=1,
        d_diff=1,
        G=_nagumo_G,
        DG=_nagumo_DG,
        P_minus=np.zeros(1),
        P_plus=np.ones(1),
    )


def linear_model(lam: float) -> ReactionModel:
    """純量測試問題 G(v) = λv"""
    return ReactionModel(
        name="linear",
        d=1,
        d_diff=1,
        G=partial(_linear_G, lam=lam),
        DG=partial(_linear_DG, lam=lam),
        P_minus=np.zeros(1),
        P_plus=np.zeros(1),
        params={"lam": lam},
    )


def model_from_name(name: str, **params) -> ReactionModel:
    if name == "fhn":
        return fhn_model(params.get("rho", 0.01), params.get("gamma", 5.0))
    if name == "nagumo":
        return nagumo_model()
    raise ValueError(f"unknown model {name!r}")


# ==========================================
# (HS2) 與 Jacobian 檢查
# ==========================================
def check_hs2(model: ReactionModel, r_samples=(0.05, 0.11, 0.25, 0.5, 0.75), tol: float = 1e-12) -> Hs2Report:
    res_minus = max(float(np.max(np.abs(model.G(model.P_minus, r)))) for r in r_samples)
    res_plus = max(float(np.max(np.abs(model.G(model.P_plus, r)))) for r in r_samples)
    return Hs2Report(residual_minus=res_minus, residual_plus=res_plus,
                     passed=res_minus < tol and res_plus < tol)


def check_jacobian(model: ReactionModel, r: float = 0.11, samples: int = 100,
                   seed: int = 0, box=(-1.0, 2.0), tol: float = 1e-6) -> JacobianReport:
    """
    封閉形式 DG 與 G 的中央差分比較（相對誤差）
    """
    rng = np.random.default_rng(seed)
    U = rng.uniform(box[0], box[1], size=(samples, model.d))
    eps = 1e-6
    exact = model.DG(U, r)
    worst = 0.0
    for j in range(model.d):
        e = np.zeros(model.d)
        e[j] = eps
        column = (model.G(U + e, r) - model.G(U - e, r)) / (2 * eps)
        diff = np.abs(column - exact[..., :, j])
        scale = np.maximum(np.abs(exact[..., :, j]), 1.0)
        worst = max(worst, float(np.max(diff / scale)))
    return JacobianReport(max_relative_error=worst, samples=samples, passed=worst < tol)


# ==========================================
# (HS3) 檢查
# ==========================================
def _min_sym_eig(A: np.ndarray) -> float:
    if A.size == 0:
        return float("inf")
    return float(np.min(np.linalg.eigvalsh(0.5 * (A + A.T))))


def check_hs3(model: ReactionModel, r: float, samples: int = 100, seed: int = 0,
              box=(-1.0, 2.0), tol: float = 1e-8) -> Hs3Report:
    """
    (a)：−DG(P±) 對稱部分正定
    (b)：−DG(P±) 的兩個對角塊正定，且 G12(U) = −Γ G21(U)ᵀ 在 box^d 的取樣點上成立
    """
    A_minus = -model.DG(model.P_minus, r)
    A_plus = -model.DG(model.P_plus, r)
    eig_minus = _min_sym_eig(A_minus)
    eig_plus = _min_sym_eig(A_plus)
    a_holds = eig_minus > PD_TOL and eig_plus > PD_TOL

    k = model.d_diff
    blocks = []
    for A in (A_minus, A_plus):
        blocks += [_min_sym_eig(A[:k, :k]), _min_sym_eig(A[k:, k:])]
    blocks_ok = all(v > PD_TOL for v in blocks)

    gamma = model.gamma_cross
    cross_residual = None
    if model.d > k:
        rng = np.random.default_rng(seed)
        U = rng.uniform(box[0], box[1], size=(samples, model.d))
        J = model.DG(U, r)
        G12 = J[:, :k, k:]
        G21T = np.swapaxes(J[:, k:, :k], 1, 2)
        if gamma is None:
            denom = float(np.sum(G21T * G21T))
            gamma = -float(np.sum(G12 * G21T)) / denom if denom > 0 else None
        if gamma is not None:
            cross_residual = float(np.max(np.abs(G12 + gamma * G21T)))
        b_holds = bool(blocks_ok and gamma is not None and gamma > 0 and cross_residual < tol)
    else:
        b_holds = blocks_ok

    branch = "a" if a_holds else ("b" if b_holds else None)
    logger.debug("HS3 for %s at r=%s: a=%s b=%s gamma=%s", model.name, r, a_holds, b_holds, gamma)
    return Hs3Report(
        a_holds=a_holds,
        b_holds=b_holds,
        min_eigenvalue_minus=eig_minus,
        min_eigenvalue_plus=eig_plus,
        block_min_eigenvalues=[v for v in blocks if np.isfinite(v)],
        gamma=gamma,
        cross_residual=cross_residual,
        samples=samples if model.d > k else 0,
        branch=branch,
    )
