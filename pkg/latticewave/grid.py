"""
有理網格運算 - M = p/q、旋轉數 θ、網格視窗、剖面與加權內積

網格點一律以整數索引 j 表示（ξ = j/p），所有位移都是精確的索引偏移：
位移 m 對應 m·p，位移 M⁻¹ 對應 q。
"""
import csv
import logging
from dataclasses import dataclass
from fractions import Fraction
from math import gcd
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline

from .errors import CouplingError, GridMismatchError, MisalignedGridError
from .models import ProfileDocument

logger = logging.getLogger(__name__)

Extension = Literal["constant", "neumann", "linear"]
EXTENSIONS = ("constant", "neumann", "linear")


# ==========================================
# 有理耦合 M = p/q
# ==========================================
@dataclass(frozen=True)
class RationalCoupling:
    """
    M = p/q = (cΔt)⁻¹，n 與 θ 滿足 1 = (n+θ)M⁻¹
    """
    p: int
    q: int

    @property
    def M(self) -> Fraction:
        return Fraction(self.p, self.q)

    @property
    def n(self) -> int:
        return (self.p - 1) // self.q

    @property
    def theta(self) -> Fraction:
        return Fraction(self.p - self.n * self.q, self.q)

    @property
    def theta_steps(self) -> int:
        """θq，ζ 方向每次扭轉前進的格數"""
        return self.p - self.n * self.q

    @property
    def in_theory(self) -> bool:
        """是否屬於 ℳ_q（p ≥ q）"""
        return self.p >= self.q

    def wavespeed(self, dt) -> Fraction:
        """c = q/(pΔt)"""
        return Fraction(self.q, self.p) / Fraction(dt)

    def invariant_defects(self) -> dict[str, bool]:
        return {
            "coprime": gcd(self.p, self.q) == 1,
            "rotation": (self.n + self.theta) / self.M == 1,
            "theta_range": 0 < self.theta <= 1,
            "strand_cycle": gcd(self.theta_steps, self.q) == 1,
        }


def make_rational(p: int, q: int, strict: bool = True) -> RationalCoupling:
    """
    建立 M = p/q

    strict=False 時允許 p < q（sweep 的理論外資料列），其餘條件不變
    """
    if p < 1 or q < 1:
        raise CouplingError(f"p and q must be positive, got ({p}, {q})")
    if gcd(p, q) != 1:
        raise CouplingError(f"gcd({p}, {q}) = {gcd(p, q)} != 1, M = p/q is not in M_q")
    if strict and p < q:
        raise CouplingError(f"p={p} < q={q}: M = p/q must satisfy p >= q to lie in M_q")
    return RationalCoupling(p, q)


# ==========================================
# 整數索引視窗與延拓規則
# ==========================================
@dataclass(frozen=True, eq=False)
class LatticeGrid:
    """
    p⁻¹ℤ 上的索引視窗 [lo, hi]，視窗外的值依延拓規則取得

    - constant: 左側取 P⁻、右側取 P⁺
    - neumann: 半格對稱反射（最近的 ghost 值複製邊界值）
    - linear: 以兩個端點值線性外插
    """
    p: int
    lo: int
    hi: int
    P_minus: np.ndarray
    P_plus: np.ndarray
    extension: Extension = "constant"

    def __post_init__(self):
        if self.extension not in EXTENSIONS:
            raise ValueError(f"unknown extension rule {self.extension!r}")
        if self.hi < self.lo:
            raise ValueError("empty lattice window")
        object.__setattr__(self, "P_minus", np.atleast_1d(np.asarray(self.P_minus, dtype=float)))
        object.__setattr__(self, "P_plus", np.atleast_1d(np.asarray(self.P_plus, dtype=float)))

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    @property
    def d(self) -> int:
        return self.P_minus.shape[0]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.lo, self.hi + 1)

    @property
    def xi(self) -> np.ndarray:
        return self.indices / self.p

    def select(self, targets: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
        """
        回傳 (S, offset) 使得 U(targets) = S @ U + offset（逐分量作用）
        """
        targets = np.asarray(targets, dtype=np.int64)
        n_out = targets.shape[0]
        N = self.size
        rows, cols, data = [], [], []
        offset = np.zeros((n_out, self.d))

        local = targets - self.lo
        inside = (local >= 0) & (local < N)
        idx = np.nonzero(inside)[0]
        rows.append(idx)
        cols.append(local[idx])
        data.append(np.ones(idx.shape[0]))

        below = np.nonzero(local < 0)[0]
        above = np.nonzero(local >= N)[0]
        if self.extension == "constant":
            offset[below] = self.P_minus
            offset[above] = self.P_plus
        elif self.extension == "neumann":
            outside = np.concatenate([below, above])
            u = np.mod(local[outside], 2 * N)
            u = np.where(u >= N, 2 * N - 1 - u, u)
            rows.append(outside)
            cols.append(u)
            data.append(np.ones(outside.shape[0]))
        else:
            if N < 2:
                raise ValueError("linear extension needs at least two points")
            k = -local[below]
            rows += [below, below]
            cols += [np.zeros_like(k), np.ones_like(k)]
            data += [1.0 + k, -k.astype(float)]
            k = local[above] - (N - 1)
            rows += [above, above]
            cols += [np.full_like(k, N - 1), np.full_like(k, N - 2)]
            data += [1.0 + k, -k.astype(float)]

        S = sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_out, N),
        ).tocsr()
        return S, offset

    def shift(self, offset: int) -> tuple[sp.csr_matrix, np.ndarray]:
        """U(j + offset) 在每個視窗點上的表示"""
        return self.select(self.indices + offset)

    def block(self, S: sp.spmatrix, weights: np.ndarray | None = None) -> sp.csr_matrix:
        """把純量選取矩陣展開到 d 分量（點優先排列），可帶對角權重"""
        diag = np.ones(self.d) if weights is None else np.asarray(weights, dtype=float)
        return sp.kron(S, sp.diags(diag), format="csr")


# ==========================================
# 波形剖面
# ==========================================
@dataclass(frozen=True, eq=False)
class WaveProfile:
    """
    p⁻¹ℤ ∩ [−L, L] 上的 d 分量剖面，values 形狀為 (2Lp+1, d)
    """
    values: np.ndarray
    p: int
    half_width: int
    P_minus: np.ndarray
    P_plus: np.ndarray
    extension: Extension = "constant"
    q: int = 1

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        P_minus = np.atleast_1d(np.asarray(self.P_minus, dtype=float))
        P_plus = np.atleast_1d(np.asarray(self.P_plus, dtype=float))
        if values.shape != (2 * self.half_width + 1, P_minus.shape[0]):
            raise ValueError(
                f"profile values have shape {values.shape}, expected "
                f"({2 * self.half_width + 1}, {P_minus.shape[0]})"
            )
        if self.extension not in EXTENSIONS:
            raise ValueError(f"unknown extension rule {self.extension!r}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "P_minus", P_minus)
        object.__setattr__(self, "P_plus", P_plus)

    @property
    def L(self) -> Fraction:
        return Fraction(self.half_width, self.p)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> LatticeGrid:
        return LatticeGrid(self.p, -self.half_width, self.half_width,
                           self.P_minus, self.P_plus, self.extension)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)

    @property
    def xi(self) -> np.ndarray:
        return self.indices / self.p

    def with_values(self, values: np.ndarray, **changes) -> "WaveProfile":
        kwargs = dict(p=self.p, half_width=self.half_width, P_minus=self.P_minus,
                      P_plus=self.P_plus, extension=self.extension, q=self.q)
        kwargs.update(changes)
        return WaveProfile(values=values, **kwargs)

    def sample(self, targets: np.ndarray) -> np.ndarray:
        """任意索引上的值（視窗外依延拓規則）"""
        S, offset = self.grid.select(targets)
        return S @ self.values + offset

    def shifted(self, offset: int) -> np.ndarray:
        return self.sample(self.indices + offset)

    def at(self, j: int) -> np.ndarray:
        return self.sample(np.array([j]))[0]

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def window_half_width(p: int, L) -> int:
    """L·p 必須是整數"""
    J = Fraction(L) * p
    if J.denominator != 1:
        raise MisalignedGridError(f"window L={L} is not a multiple of the spacing 1/{p}")
    return int(J)


def restrict(f: Callable[[np.ndarray], np.ndarray], p: int, L, P_minus, P_plus,
             extension: Extension = "constant", q: int = 1) -> WaveProfile:
    """
    π_{𝒴_M}f：在 ξ = j/p 上取樣
    """
    J = window_half_width(p, L)
    xi = np.arange(-J, J + 1) / p
    values = np.asarray(f(xi), dtype=float)
    P_minus = np.atleast_1d(np.asarray(P_minus, dtype=float))
    if values.ndim == 1:
        values = values[:, None]
    values = np.broadcast_to(values, (xi.shape[0], P_minus.shape[0])).copy()
    return WaveProfile(values, p, J, P_minus, P_plus, extension, q)


def constant_profile(value, p: int, L, extension: Extension = "constant") -> WaveProfile:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    J = window_half_width(p, L)
    return WaveProfile(np.tile(value, (2 * J + 1, 1)), p, J, value, value, extension)


# ==========================================
# 加權內積
# ==========================================
def _check_common_grid(u: WaveProfile, v: WaveProfile) -> None:
    if u.p != v.p or u.half_width != v.half_width or u.d != v.d:
        raise GridMismatchError(
            f"profiles live on different grids: (p={u.p}, J={u.half_width}, d={u.d}) "
            f"vs (p={v.p}, J={v.half_width}, d={v.d})"
        )


def inner_product_scaled(u: WaveProfile, v: WaveProfile, mu: float | None = None) -> float:
    """
    ⟨u, v⟩ = μ⁻¹ ∑_ξ ⟨u(ξ), v(ξ)⟩，預設 μ = p（即 𝒴_M 的內積）
    """
    _check_common_grid(u, v)
    mu = u.p if mu is None else mu
    return float(np.vdot(u.values, v.values).real) / mu


def scaled_norm(u: WaveProfile, mu: float | None = None) -> float:
    return float(np.sqrt(max(inner_product_scaled(u, u, mu), 0.0)))


def transverse_weights(q: int) -> np.ndarray:
    """ℓ²_{q,⊥} 的梯形權重 q⁻¹[½, 1, ..., 1, ½]"""
    w = np.ones(q + 1)
    w[0] = w[-1] = 0.5
    return w / q


def inner_product_transverse(a: np.ndarray, b: np.ndarray, q: int | None = None) -> float:
    """
    ℓ²_{q,⊥} 內積，a、b 以 ζ ∈ q⁻¹ℤ_q 索引（q+1 個樣本）
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise GridMismatchError(f"transverse vectors differ in shape: {a.shape} vs {b.shape}")
    q = a.shape[0] - 1 if q is None else q
    if a.shape[0] != q + 1:
        raise GridMismatchError(f"expected {q + 1} transverse samples, got {a.shape[0]}")
    w = transverse_weights(q)
    products = (a * b).reshape(q + 1, -1).sum(axis=1)
    return float(w @ products)


# ==========================================
# ℋ_M 上的週期場
# ==========================================
@dataclass(frozen=True, eq=False)
class PeriodicField:
    """
    ℋ_M 的元素，values[i, s] = Φ(ζ=i/q, ξ=s/M)，形狀 (q+1, Ns, d)

    縫合條件 Φ(1, ξ) = Φ(0, ξ+M⁻¹)，也就是 values[q, s] == values[0, s+1]
    """
    values: np.ndarray
    coupling: RationalCoupling
    s_min: int
    P_minus: np.ndarray
    P_plus: np.ndarray
    extension: Extension = "constant"

    @property
    def q(self) -> int:
        return self.coupling.q

    @property
    def n_strips(self) -> int:
        return self.values.shape[1]

    @property
    def lo(self) -> int:
        return self.s_min * self.q

    @property
    def hi(self) -> int:
        return (self.s_min + self.n_strips) * self.q

    @property
    def grid(self) -> LatticeGrid:
        return LatticeGrid(self.coupling.p, self.lo, self.hi,
                           self.P_minus, self.P_plus, self.extension)

    def seam_defect(self) -> float:
        if self.n_strips < 2:
            return 0.0
        return float(np.max(np.abs(self.values[self.q, :-1] - self.values[0, 1:])))

    def to_vector(self) -> np.ndarray:
        """依 j = s·q + i 排列的相異點值，形狀 (Ns·q + 1, d)"""
        body = np.swapaxes(self.values[: self.q], 0, 1).reshape(-1, self.values.shape[2])
        return np.vstack([body, self.values[self.q, -1][None, :]])

    @classmethod
    def from_vector(cls, vector: np.ndarray, coupling: RationalCoupling, s_min: int,
                    P_minus, P_plus, extension: Extension = "constant") -> "PeriodicField":
        vector = np.asarray(vector)
        if vector.ndim == 1:
            vector = vector[:, None]
        q = coupling.q
        n_strips, rem = divmod(vector.shape[0] - 1, q)
        if rem:
            raise MisalignedGridError("vector length is not Ns*q + 1")
        j = np.arange(n_strips)[None, :] * q + np.arange(q + 1)[:, None]
        return cls(vector[j], coupling, s_min, np.atleast_1d(P_minus),
                   np.atleast_1d(P_plus), extension)


def hm_inner_product(a: PeriodicField, b: PeriodicField) -> float:
    """⟨Φ, Ψ⟩_{ℋ_M} = M⁻¹ ∑_ξ ⟨Φ(·,ξ), Ψ(·,ξ)⟩_{ℓ²_{q,⊥}}"""
    if a.values.shape != b.values.shape or a.coupling != b.coupling or a.s_min != b.s_min:
        raise GridMismatchError("fields live on different H_M windows")
    w = transverse_weights(a.q)
    products = np.real(np.sum(np.conj(a.values) * b.values, axis=2))
    return float(np.sum(w @ products)) / float(a.coupling.M)


def hm_norm(a: PeriodicField) -> float:
    return float(np.sqrt(max(hm_inner_product(a, a), 0.0)))


def embed_isometry(phi: WaveProfile, coupling: RationalCoupling) -> PeriodicField:
    """
    [𝒥_MΦ](ζ, ξ) = Φ(ξ + M⁻¹ζ)：(i, s) 對應索引 j = s·q + i
    """
    if phi.p != coupling.p:
        raise GridMismatchError(f"profile spacing 1/{phi.p} does not match p={coupling.p}")
    q = coupling.q
    if phi.half_width % q:
        raise MisalignedGridError(
            f"window half-width {phi.half_width} is not a multiple of q={q}"
        )
    s_min = -phi.half_width // q
    n_strips = 2 * phi.half_width // q
    j = (np.arange(n_strips)[None, :] + s_min) * q + np.arange(q + 1)[:, None]
    values = phi.values[j + phi.half_width]
    return PeriodicField(values, coupling, s_min, phi.P_minus, phi.P_plus, phi.extension)


def collapse_field(field_: PeriodicField) -> WaveProfile:
    """𝒥_M⁻¹：由相異點值還原 p⁻¹ℤ 上的剖面"""
    if field_.lo != -field_.hi:
        raise MisalignedGridError("field window is not symmetric")
    return WaveProfile(field_.to_vector(), field_.coupling.p, field_.hi, field_.P_minus,
                       field_.P_plus, field_.extension, field_.q)


# ==========================================
# 檔案格式
# ==========================================
def profile_document(profile: WaveProfile, config_hash: str | None = None) -> ProfileDocument:
    return ProfileDocument(
        p=profile.p,
        q=profile.q,
        L=str(profile.L),
        d=profile.d,
        P_minus=profile.P_minus.tolist(),
        P_plus=profile.P_plus.tolist(),
        extension=profile.extension,
        values=profile.values.reshape(-1).tolist(),
        config_hash=config_hash,
    )


def profile_from_document(doc: ProfileDocument) -> WaveProfile:
    J = window_half_width(doc.p, Fraction(doc.L))
    values = np.asarray(doc.values, dtype=float).reshape(2 * J + 1, doc.d)
    return WaveProfile(values, doc.p, J, doc.P_minus, doc.P_plus, doc.extension, doc.q)


def save_profile(profile: WaveProfile, path: Path, config_hash: str | None = None) -> Path:
    path = Path(path)
    path.write_text(profile_document(profile, config_hash).model_dump_json(indent=2))
    return path


def load_profile(path: Path) -> WaveProfile:
    return profile_from_document(ProfileDocument.model_validate_json(Path(path).read_text()))


def export_profile_csv(profile: WaveProfile, path: Path, config_hash: str | None = None) -> Path:
    """兩欄以上的 (ξ, u0, u1, ...) CSV，供外部繪圖"""
    path = Path(path)
    with path.open("w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(["xi"] + [f"u{i}" for i in range(profile.d)])
        for x, row in zip(profile.xi, profile.values):
            writer.writerow([repr(float(x))] + [repr(float(v)) for v in row])
    return path


# ==========================================
# 組裝與重新取樣
# ==========================================
def block_diagonal(blocks: np.ndarray) -> sp.csr_matrix:
    """(N, d, d) 的逐點矩陣組成區塊對角稀疏矩陣"""
    blocks = np.asarray(blocks, dtype=float)
    N, d, _ = blocks.shape
    return sp.bsr_matrix((blocks, np.arange(N), np.arange(N + 1)), shape=(N * d, N * d)).tocsr()


def resample(profile: WaveProfile, p: int, L, extension: Extension | None = None,
             shift: float = 0.0) -> WaveProfile:
    """
    以線性內插把剖面搬到 p⁻¹ℤ ∩ [−L, L]，可同時平移 ξ → ξ + shift；
    舊視窗外取 P±
    """
    J = window_half_width(p, L)
    xi = np.arange(-J, J + 1) / p + shift
    values = np.column_stack([
        np.interp(xi, profile.xi, profile.values[:, i],
                  left=profile.P_minus[i], right=profile.P_plus[i])
        for i in range(profile.d)
    ])
    return WaveProfile(values, p, J, profile.P_minus, profile.P_plus,
                       profile.extension if extension is None else extension, profile.q)


def spline_resample(profile: WaveProfile, p: int, L=None, extension: Extension | None = None,
                    shift: float = 0.0, q: int | None = None) -> WaveProfile:
    """
    三次樣條版本的 resample：細網格剖面取樣到 p⁻¹ℤ（ξ → ξ + shift），舊視窗外取 P±
    """
    L = profile.L if L is None else L
    J = window_half_width(p, L)
    xi = np.arange(-J, J + 1) / p + shift
    spline = CubicSpline(profile.xi, profile.values, axis=0)
    values = spline(xi)
    values[xi < profile.xi[0]] = profile.P_minus
    values[xi > profile.xi[-1]] = profile.P_plus
    return WaveProfile(values, p, J, profile.P_minus, profile.P_plus,
                       profile.extension if extension is None else extension,
                       profile.q if q is None else q)
