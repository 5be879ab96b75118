"""
例外定義 - 使用者錯誤與數值失敗分開處理

使用者錯誤（設定、前置條件）對應 CLI 結束碼 1，
數值失敗（Newton 不收斂、核維度錯誤等）對應結束碼 2。
"""


class LatticeWaveError(Exception):
    """所有套件例外的基底類別"""


# ==========================================
# 使用者錯誤
# ==========================================
class ConfigError(LatticeWaveError):
    """設定檔內容無效"""


class MisalignedGridError(LatticeWaveError, ValueError):
    """位移量不是網格間距的整數倍"""


class CouplingError(LatticeWaveError, ValueError):
    """(p, q) 不屬於 ℳ_q（需要 gcd(p,q)=1 且 p ≥ q）"""


class GridMismatchError(LatticeWaveError, ValueError):
    """兩個剖面不在同一個網格上"""


class MissingContextError(LatticeWaveError, ValueError):
    """建構運算子所需的上下文缺失"""


# ==========================================
# 數值失敗
# ==========================================
class SolverError(LatticeWaveError):
    """數值求解失敗的基底類別"""


class NewtonDivergenceError(SolverError):
    """Newton 迭代在上限內未收斂"""

    def __init__(self, message: str, iterations: int = 0, residual: float = float("nan")):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


class SingularJacobianError(SolverError):
    """Jacobian（或加邊系統）奇異"""


class WaveSpeedVanishedError(SolverError):
    """波速收斂到 0，違反 c̄₀ ≠ 0"""

    def __init__(self, message: str, c: float):
        super().__init__(message)
        self.c = c


class TrivialSolutionError(SolverError):
    """收斂到平凡解（振幅低於門檻）"""

    def __init__(self, message: str, amplitude: float):
        super().__init__(message)
        self.amplitude = amplitude


class KernelDimensionError(SolverError):
    """數值核的維度不是 1"""


class NonSimpleKernelError(SolverError):
    """⟨Φ₀⁺, Φ₀⁻⟩ ≈ 0，特徵值不是簡單的"""


class SpectralGapError(SolverError):
    """L₀ + δ 奇異，頻譜間隙不存在"""


class NoCrossingError(SolverError):
    """軌跡中找不到指定水平的穿越點"""


class WorkerPoolError(SolverError):
    """平行任務連續崩潰次數超過上限"""
