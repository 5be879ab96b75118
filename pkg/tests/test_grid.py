"""
有理網格、延拓規則與 ℋ_M 嵌入測試
"""
from fractions import Fraction

import numpy as np
import pytest

from latticewave.errors import CouplingError, GridMismatchError, MisalignedGridError
from latticewave.grid import (
    LatticeGrid,
    PeriodicField,
    collapse_field,
    constant_profile,
    embed_isometry,
    hm_norm,
    inner_product_scaled,
    inner_product_transverse,
    load_profile,
    make_rational,
    resample,
    restrict,
    save_profile,
    scaled_norm,
    spline_resample,
    window_half_width,
)


# ==========================================
# M = p/q
# ==========================================
def test_rotation_data_for_eight_fifths():
    coupling = make_rational(8, 5)
    assert coupling.M == Fraction(8, 5)
    assert coupling.n == 1
    assert coupling.theta == Fraction(3, 5)
    assert coupling.theta_steps == 3
    assert coupling.wavespeed("2") == Fraction(5, 16)
    assert all(coupling.invariant_defects().values())


@pytest.mark.parametrize("p, q", [(1, 1), (3, 1), (7, 3), (8, 5), (9, 4)])
def test_rotation_identity(p, q):
    coupling = make_rational(p, q)
    assert (coupling.n + coupling.theta) / coupling.M == 1
    assert 0 < coupling.theta <= 1


def test_make_rational_rejections():
    with pytest.raises(CouplingError):
        make_rational(4, 6)
    with pytest.raises(CouplingError):
        make_rational(3, 5)
    with pytest.raises(CouplingError):
        make_rational(0, 1)
    relaxed = make_rational(3, 5, strict=False)
    assert not relaxed.in_theory


# ==========================================
# 延拓規則
# ==========================================
def test_neumann_reflection_indices():
    grid = LatticeGrid(1, 0, 3, [0.0], [0.0], "neumann")
    S, offset = grid.select(np.array([-1, -2, 4, 5, 2]))
    values = np.array([10.0, 11.0, 12.0, 13.0])
    assert np.array_equal(S @ values, [10.0, 11.0, 13.0, 12.0, 12.0])
    assert np.all(offset == 0)


def test_constant_and_linear_extension():
    values = np.array([[0.0], [1.0], [2.0], [3.0]])
    constant = LatticeGrid(1, 0, 3, [-5.0], [7.0], "constant")
    S, offset = constant.select(np.array([-1, 4]))
    assert np.array_equal((S @ values + offset)[:, 0], [-5.0, 7.0])

    linear = LatticeGrid(1, 0, 3, [0.0], [0.0], "linear")
    S, offset = linear.select(np.array([-2, 5]))
    assert np.allclose((S @ values + offset)[:, 0], [-2.0, 5.0])


def test_window_half_width_alignment():
    assert window_half_width(8, 80) == 640
    assert window_half_width(3, Fraction(2, 3)) == 2
    with pytest.raises(MisalignedGridError):
        window_half_width(5, Fraction(1, 3))


# ==========================================
# 內積與 ℋ_M
# ==========================================
def _compact_profile(p, q, L, rng, d=2):
    profile = restrict(lambda xi: np.zeros((xi.size, d)), p, L, np.zeros(d), np.zeros(d), q=q)
    values = rng.uniform(-1, 1, size=profile.values.shape)
    values[:p] = 0.0
    values[-p:] = 0.0
    return profile.with_values(values)


def test_scaled_inner_product_grid_check(rng):
    u = _compact_profile(4, 1, 5, rng)
    v = _compact_profile(2, 1, 5, rng)
    with pytest.raises(GridMismatchError):
        inner_product_scaled(u, v)


@pytest.mark.parametrize("p, q", [(8, 5), (7, 3), (3, 1)])
def test_embedding_is_isometric_on_compact_profiles(p, q, rng):
    coupling = make_rational(p, q)
    profile = _compact_profile(p, q, q * 4, rng)
    field_ = embed_isometry(profile, coupling)
    assert hm_norm(field_) == pytest.approx(scaled_norm(profile), rel=1e-12)
    assert field_.seam_defect() == 0.0


def test_embedding_inverts_on_the_same_window(rng):
    coupling = make_rational(7, 3)
    profile = _compact_profile(7, 3, 6, rng)
    field_ = embed_isometry(profile, coupling)
    back = collapse_field(field_)
    assert np.array_equal(back.values, profile.values)
    again = PeriodicField.from_vector(field_.to_vector(), coupling, field_.s_min,
                                      field_.P_minus, field_.P_plus)
    assert np.array_equal(again.values, field_.values)


def test_embedding_requires_aligned_window(rng):
    coupling = make_rational(8, 5)
    profile = restrict(lambda xi: np.zeros_like(xi), 8, 1, [0.0], [0.0])
    with pytest.raises(MisalignedGridError):
        embed_isometry(profile, coupling)
    with pytest.raises(GridMismatchError):
        embed_isometry(_compact_profile(4, 1, 5, rng), coupling)


# ==========================================
# 重新取樣與檔案
# ==========================================
def test_spline_resample_reproduces_smooth_function():
    fine = restrict(lambda xi: np.sin(xi / 3.0), 16, 10, [0.0], [0.0])
    coarse = spline_resample(fine, 4, 8, shift=0.125)
    expected = np.sin((coarse.xi + 0.125) / 3.0)
    assert np.allclose(coarse.values[:, 0], expected, atol=1e-6)


def test_profile_file_preserves_values(tmp_path):
    profile = constant_profile([0.25, -1.0], 3, 2, extension="neumann")
    path = save_profile(profile, tmp_path / "profile.json", config_hash="abc")
    restored = load_profile(path)
    assert restored.L == profile.L
    assert restored.extension == "neumann"
    assert np.array_equal(restored.values, profile.values)


def test_transverse_inner_product_uses_trapezoid_weights():
    q = 5
    assert inner_product_transverse(np.ones(q + 1), np.ones(q + 1)) == pytest.approx(1.0)
    a = np.zeros(q + 1)
    a[0] = 2.0
    assert inner_product_transverse(a, a, q) == pytest.approx(0.5 * 4.0 / q)
    with pytest.raises(GridMismatchError):
        inner_product_transverse(np.ones(4), np.ones(5))
    with pytest.raises(GridMismatchError):
        inner_product_transverse(np.ones(4), np.ones(4), q=5)


def test_linear_resample_is_exact_on_linear_profiles():
    fine = restrict(lambda xi: 0.1 * xi[:, None], 8, 10, [-1.0], [1.0])
    coarse = resample(fine, 2, 5, shift=0.25)
    assert np.allclose(coarse.values[:, 0], 0.1 * (coarse.xi + 0.25), atol=1e-12)
