"""
資料模型定義 - 設定檔、報告與檔案格式（pydantic）
"""
import hashlib
import json
from fractions import Fraction
from typing import Literal, Optional

from pydantic import BaseModel, Field, computed_field, field_validator, model_validator

# ==========================================
# 檔案格式
# ==========================================
class ProfileDocument(BaseModel):
    """
    剖面檔案：values 為 (2Lp+1)×d 的列優先展開
    """
    p: int = Field(..., ge=1, description="網格間距 1/p")
    q: int = Field(default=1, ge=1, description="M = p/q 的分母")
    L: str = Field(..., description="視窗半寬（有理數字串）")
    d: int = Field(..., ge=1, description="分量數")
    P_minus: list[float] = Field(..., description="左極限狀態")
    P_plus: list[float] = Field(..., description="右極限狀態")
    extension: Literal["constant", "neumann", "linear"] = Field(default="constant", description="邊界延拓規則")
    values: list[float] = Field(..., description="列優先的剖面值")
    config_hash: Optional[str] = Field(default=None, description="產生此檔案的設定雜湊")

    class Config:
        json_schema_extra = {
            "example": {
                "p": 8, "q": 5, "L": "80", "d": 2,
                "P_minus": [0.0, 0.0], "P_plus": [0.0, 0.0],
                "extension": "neumann",
                "values": [0.0, 0.0, 0.0, 0.0],
            }
        }


class KernelDocument(BaseModel):
    """
    交互作用核：coefficients[m-1] 為 α_m 的對角元素
    """
    d: int = Field(..., ge=1)
    d_diff: int = Field(..., ge=1)
    tau: float = Field(..., gt=0)
    nu: float = Field(..., gt=0)
    m_max: int = Field(..., ge=0)
    coefficients: list[list[float]] = Field(..., description="α_1..α_{m_max} 的對角元素")
    tail_bound: float = Field(..., ge=0, description="m > m_max 的 ∑m²|α_m| 上界")
    tail_tol: float = Field(default=1e-14, gt=0)


class WaveDocument(BaseModel):
    """
    半離散行波資料包，剖面另存成 ProfileDocument
    """
    c0: float
    r: float
    residual: float
    lambda_tilde: float
    p0: int
    iterations: int
    sigma_min: float = Field(..., description="L₀ 最小奇異值")
    sigma_gap: float = Field(..., description="L₀ 第二小奇異值")
    profiles: dict[str, str] = Field(..., description="U0 / Phi_plus / Phi_minus 的檔名")
    config_hash: Optional[str] = None


class FullyDiscreteDocument(BaseModel):
    p: int
    q: int
    k: int
    dt: str
    c: str = Field(..., description="c = q/(pΔt)，有理數字串")
    r: float
    residual: float
    front_amplitude: float
    iterations: int
    seed: str
    profile: str
    config_hash: Optional[str] = None


# ==========================================
# 檢查報告
# ==========================================
class Hs1Report(BaseModel):
    """
    (HS1) 檢查報告
    """
    min_symbol: list[float] = Field(..., description="各擴散分量 A_i(z) 在取樣點上的最小值")
    normalization_residual: list[float] = Field(..., description="|∑α_m m² − 1|")
    decay_sum: float = Field(..., description="∑|α_m|e^{mν}（截斷和）")
    tail_bound: float
    structure_ok: bool = Field(..., description="非擴散分量係數為 0、擴散分量至少一個非零")
    positivity_ok: bool
    normalization_ok: bool
    tail_ok: bool

    @computed_field
    @property
    def passed(self) -> bool:
        return self.structure_ok and self.positivity_ok and self.normalization_ok and self.tail_ok


class Hs2Report(BaseModel):
    residual_minus: float
    residual_plus: float
    passed: bool


class JacobianReport(BaseModel):
    max_relative_error: float
    samples: int
    passed: bool


class Hs3Report(BaseModel):
    """
    (HS3) 檢查報告，branch 指出下游求解器應引用的條件
    """
    a_holds: bool
    b_holds: bool
    min_eigenvalue_minus: float = Field(..., description="−DG(P⁻) 對稱部分最小特徵值")
    min_eigenvalue_plus: float
    block_min_eigenvalues: list[float] = Field(default_factory=list, description="(b) 四個對角塊的最小特徵值")
    gamma: Optional[float] = Field(default=None, description="Γ（給定或擬合）")
    cross_residual: Optional[float] = Field(default=None, description="G12 + ΓG21ᵀ 的最大偏差")
    samples: int = 0
    branch: Optional[Literal["a", "b"]] = None
    note: str = "sampled check on a box; cannot certify the relation for all U"


class AssumptionReport(BaseModel):
    hs1: Hs1Report
    hs2: Hs2Report
    jacobian: JacobianReport
    hs3: Hs3Report
    config_hash: Optional[str] = None

    @computed_field
    @property
    def passed(self) -> bool:
        return self.hs1.passed and self.hs2.passed and self.jacobian.passed and self.hs3.branch is not None


class SweepRow(BaseModel):
    """
    sweep 的一列
    """
    p: int
    q: int
    c: float
    r: float
    converged: bool
    residual: float
    front_amplitude: float
    iters: int
    seed: str = Field(..., description="種子來源：simulation / semidiscrete / neighbor / none")
    in_theory: bool = True

    class Config:
        json_schema_extra = {
            "example": {
                "p": 8, "q": 5, "c": 0.3125, "r": 0.11, "converged": True,
                "residual": 3.1e-12, "front_amplitude": 1.02, "iters": 6,
                "seed": "simulation", "in_theory": True,
            }
        }


class WavespeedReport(BaseModel):
    """
    speed 為穿越點位置對時間的斜率；profile_speed = −speed 為 U_j(t) = Φ(j + ct) 中的 c
    """
    speed: float
    profile_speed: float
    fit_residual: float
    window: tuple[float, float] = Field(..., description="擬合所用的時間區間")
    config_hash: Optional[str] = None


class ScanReport(BaseModel):
    min_abs_det: float
    argmin_y: float
    argmin_rho: float
    min_curve_distance: float = Field(..., description="det 曲線折線到原點的最小距離")
    threshold: float
    passed: bool
    points: int
    config_hash: Optional[str] = None


class DiagnosticReport(BaseModel):
    deltas: list[float]
    estimates: list[float]
    kappa_hat: float
    adjoint: bool
    quasi_inverse_ratio: Optional[float] = None
    config_hash: Optional[str] = None


class RunMetadata(BaseModel):
    command: str
    config_hash: str
    package_version: str
    python_version: str
    numpy_version: str
    scipy_version: str
    rng_seed: int
    tolerances: dict[str, float]
    wall_time_seconds: float
    exit_code: int
    system: dict[str, float]


# ==========================================
# 執行設定
# ==========================================
class ModelBlock(BaseModel):
    name: Literal["fhn", "nagumo"] = Field(default="fhn", description="反應項名稱")
    rho: float = Field(default=0.01, gt=0)
    gamma: float = Field(default=5.0, gt=0)


class KernelBlock(BaseModel):
    """
    tau 與 h 擇一；給 h 時使用 τ = h⁻² 並以 h⁻¹ 縮放左側（縮放後的 FHN 格點系統）
    """
    name: Literal["gaussian", "nearest"] = Field(default="nearest")
    tau: Optional[float] = Field(default=None, gt=0)
    h: Optional[float] = Field(default=None, gt=0)
    tail_tol: float = Field(default=1e-14, gt=0)

    @model_validator(mode="after")
    def _one_scale(self):
        if self.tau is not None and self.h is not None:
            raise ValueError("give either tau or h, not both")
        return self

    @property
    def coupling_strength(self) -> float:
        if self.h is not None:
            return 1.0 / self.h ** 2
        return 1.0 if self.tau is None else self.tau

    @property
    def lhs_scale(self) -> float:
        return 1.0 if self.h is None else 1.0 / self.h


class GridBlock(BaseModel):
    p: int = Field(default=8, ge=1)
    q: int = Field(default=5, ge=1)
    L: float = Field(default=80.0, gt=0, description="視窗半寬")
    dt: str = Field(default="2", description="時間步長（有理數字串）")
    p0: int = Field(default=8, ge=1, description="半離散解析度")
    extension: Literal["constant", "neumann", "linear"] = Field(default="neumann")

    @field_validator("dt")
    @classmethod
    def _rational_dt(cls, value: str) -> str:
        if Fraction(value) <= 0:
            raise ValueError("dt must be positive")
        return value


class SweepBlock(BaseModel):
    p_values: list[int] = Field(default_factory=lambda: list(range(1, 9)))
    q_rule: Literal["theory", "extended"] = Field(default="extended", description="theory: q ≤ p；extended: q ≤ 2p")
    r_values: list[float] = Field(default_factory=lambda: [round(0.01 * i, 2) for i in range(1, 20)])
    seed_policy: list[Literal["simulation", "semidiscrete", "neighbor"]] = Field(
        default_factory=lambda: ["simulation", "semidiscrete", "neighbor"]
    )


class RunBlock(BaseModel):
    r: float = Field(default=0.11, gt=0, lt=1)
    tol: float = Field(default=1e-10, gt=0)
    max_iter: int = Field(default=50, ge=1)
    rng_seed: int = Field(default=0, ge=0)
    output_dir: str = Field(default="runs")
    deltas: list[float] = Field(default_factory=lambda: [0.05, 0.025, 0.0125])
    rho_grid: list[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0])
    y_points: int = Field(default=1024, ge=16, description="每 2π 的取樣點數")
    n_steps: int = Field(default=120, ge=1, description="時間模擬步數")
    stride: int = Field(default=10, ge=1, description="快照間隔")


class RunConfig(BaseModel):
    """
    CLI 設定檔
    """
    model: ModelBlock = Field(default_factory=ModelBlock)
    kernel: KernelBlock = Field(default_factory=lambda: KernelBlock(h=0.625))
    scheme: int = Field(default=1, ge=1, le=6, description="BDF 階數 k")
    grid: GridBlock = Field(default_factory=GridBlock)
    sweep: SweepBlock = Field(default_factory=SweepBlock)
    run: RunBlock = Field(default_factory=RunBlock)

    class Config:
        protected_namespaces = ()
        json_schema_extra = {
            "example": {
                "model": {"name": "fhn", "rho": 0.01, "gamma": 5.0},
                "kernel": {"name": "nearest", "h": 0.625},
                "scheme": 1,
                "grid": {"p": 8, "q": 5, "L": 80, "dt": "2", "extension": "neumann"},
                "run": {"r": 0.11, "tol": 1e-10, "rng_seed": 0},
            }
        }

    def config_hash(self) -> str:
        """輸出目錄不影響雜湊"""
        data = self.model_dump(mode="json", exclude={"run": {"output_dir"}})
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()
