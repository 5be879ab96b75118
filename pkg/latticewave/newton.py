"""
稀疏 Newton 迭代 - 行波求解與隱式時間步進共用
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import MatrixRankWarning, spsolve

from .errors import NewtonDivergenceError, SingularJacobianError
from .metrics import newton_iterations_total

logger = logging.getLogger(__name__)


@dataclass
class NewtonResult:
    x: np.ndarray
    iterations: int
    residual: float
    history: list[float] = field(default_factory=list)


def solve_linear(J, rhs: np.ndarray) -> np.ndarray:
    """稀疏或稠密線性系統；奇異時拋出 SingularJacobianError"""
    with warnings.catch_warnings():
        warnings.simplefilter("error", MatrixRankWarning)
        try:
            if sp.issparse(J):
                x = spsolve(sp.csc_matrix(J), rhs)
            else:
                x = np.linalg.solve(J, rhs)
        except (MatrixRankWarning, np.linalg.LinAlgError, RuntimeError) as e:
            raise SingularJacobianError(f"singular Jacobian: {e}") from e
    if not np.all(np.isfinite(x)):
        raise SingularJacobianError("linear solve produced non-finite values")
    return x


def newton_solve(residual: Callable[[np.ndarray], np.ndarray],
                 jacobian: Callable[[np.ndarray], object],
                 x0: np.ndarray,
                 tol: float = 1e-10,
                 max_iter: int = 50,
                 damped: bool = False,
                 solver: str = "newton") -> NewtonResult:
    """
    以 sup norm 判斷收斂；damped=True 時使用回溯線搜尋
    """
    x = np.array(x0, dtype=float)
    F = residual(x)
    res = float(np.max(np.abs(F))) if F.size else 0.0
    history = [res]
    iterations = 0
    try:
        while res >= tol:
            if iterations >= max_iter or not np.isfinite(res):
                raise NewtonDivergenceError(
                    f"{solver}: no convergence after {iterations} iterations (residual {res:.3e})",
                    iterations=iterations, residual=res,
                )
            dx = solve_linear(jacobian(x), -F)
            step = 1.0
            x_new = x + dx
            F_new = residual(x_new)
            res_new = float(np.max(np.abs(F_new)))
            if damped:
                while not (res_new < (1.0 - 1e-4 * step) * res) and step > 1.0 / 1024:
                    step *= 0.5
                    x_new = x + step * dx
                    F_new = residual(x_new)
                    res_new = float(np.max(np.abs(F_new)))
            x, F, res = x_new, F_new, res_new
            iterations += 1
            history.append(res)
            logger.debug("%s iteration %d: residual %.3e (step %.4g)", solver, iterations, res, step)
    finally:
        newton_iterations_total.labels(solver=solver).inc(iterations)
    return NewtonResult(x, iterations, res, history)
