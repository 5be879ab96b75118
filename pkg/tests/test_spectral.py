"""
扭轉算子、特徵矩陣、調和投影與頻譜診斷測試
"""
from fractions import Fraction

import numpy as np
import pytest

from latticewave.bdf import apply_discrete_derivative, bdf_scheme
from latticewave.errors import CouplingError, GridMismatchError, MissingContextError
from latticewave.grid import (
    LatticeGrid,
    PeriodicField,
    RationalCoupling,
    embed_isometry,
    hm_inner_product,
    make_rational,
    restrict,
    spline_resample,
)
from latticewave.kernel import apply_nonlocal_laplacian, build_gaussian_kernel, build_nearest_neighbor_kernel
from latticewave.reaction import linear_model
from latticewave.semidiscrete import assemble_L0
from latticewave.spectral import (
    CharacteristicContext,
    build_twisted_operator,
    bump_field,
    characteristic_matrix,
    export_coo,
    harmonic_projection,
    hm_grid,
    hyperbolicity_scan,
    interpolate,
    intertwining_defect,
    laplacian_limit_probe,
    limit_field,
    limit_kernel_check,
    limit_resolvent_ratios,
    modulated_projection,
    quadratic_form_negativity,
    quasi_inverse_ratio_study,
    quasi_inverse_solve,
    spectral_convergence_diagnostic,
    spectral_convergence_study,
    symbol_periodicity_defect,
    twist_targets,
)


# ==========================================
# ℋ_M 上的扭轉算子
# ==========================================
@pytest.mark.parametrize("p, q", [(8, 5), (7, 3), (1, 1), (2, 3)])
def test_twist_is_shift_by_p(p, q):
    coupling = RationalCoupling(p, q)
    j = np.arange(-60, 61)
    for m in (1, 2, -1, -3):
        assert np.array_equal(twist_targets(coupling, j, m), j + m * p)


def test_T_M_matches_lattice_shift():
    coupling = make_rational(8, 5)
    grid = hm_grid(coupling, 40, 1)
    kernel = build_nearest_neighbor_kernel(1, 1, 1.0)
    op = build_twisted_operator("T_M", kernel, coupling, grid)
    S, _ = grid.shift(8)
    assert abs(op.matrix - grid.block(S)).sum() == 0


def test_delta_M_reduces_to_lattice_laplacian(rng):
    coupling = make_rational(8, 5)
    kernel = build_gaussian_kernel(1, 1, tau=2.0)
    profile = restrict(lambda xi: np.exp(-xi ** 2 / 4), 8, 10, [0.0], [0.0], q=5)
    op = build_twisted_operator("Delta_M", kernel, coupling, hm_grid(coupling, profile.half_width, 1))
    expected = apply_nonlocal_laplacian(kernel, profile).flat()
    assert np.allclose(op.apply(profile.flat()), expected, atol=1e-12)
    field_ = op.apply_field(embed_isometry(profile, coupling))
    assert np.allclose(field_.to_vector()[:, 0], expected, atol=1e-12)


@pytest.mark.parametrize("kernel", [build_nearest_neighbor_kernel(1, 1, 1.0), build_gaussian_kernel(1, 1, 3.0)])
def test_delta_M_quadratic_form_nonpositive(kernel):
    coupling = make_rational(8, 5)
    op = build_twisted_operator("Delta_M", kernel, coupling, hm_grid(coupling, 100, 1))
    assert quadratic_form_negativity(op, kernel, trials=200) <= 1e-12


def test_delta_M_on_single_site():
    coupling = make_rational(8, 5)
    kernel = build_nearest_neighbor_kernel(1, 1, 1.0)
    grid = hm_grid(coupling, 40, 1)
    op = build_twisted_operator("Delta_M", kernel, coupling, grid)
    spike = np.zeros((grid.size, 1))
    # j = 0 落在縫合線上（i = 0）
    spike[40] = 1.0
    s_min = grid.lo // coupling.q
    a = PeriodicField.from_vector(op.apply(spike).reshape(-1, 1), coupling, s_min, [0.0], [0.0])
    b = PeriodicField.from_vector(spike, coupling, s_min, [0.0], [0.0])
    assert hm_inner_product(a, b) == pytest.approx(-2.0 / 8)


@pytest.mark.parametrize("p, q, k", [(8, 5, 1), (3, 1, 2), (7, 3, 2)])
def test_twisted_operator_intertwines_jacobian(p, q, k, nagumo, nagumo_kernel, nagumo_wave):
    coupling = make_rational(p, q)
    defect = intertwining_defect(nagumo, nagumo_kernel, bdf_scheme(k), coupling, nagumo_wave,
                                 half_width=40 * q, samples=20)
    assert defect <= 1e-12


def test_operator_context_errors(nagumo_kernel):
    coupling = make_rational(8, 5)
    grid = hm_grid(coupling, 40, 1)
    with pytest.raises(MissingContextError):
        build_twisted_operator("K_kM", nagumo_kernel, coupling, grid)
    with pytest.raises(ValueError):
        build_twisted_operator("K_M", nagumo_kernel, coupling, grid)


def test_export_coo(tmp_path):
    coupling = make_rational(3, 2)
    grid = hm_grid(coupling, 10, 1)
    op = build_twisted_operator("T_M", build_nearest_neighbor_kernel(1, 1, 1.0), coupling, grid)
    lines = export_coo(op, tmp_path / "T_M.coo", config_hash="abc").read_text().splitlines()
    assert lines[0] == "# config_hash=abc"
    assert len(lines) == 2 + op.matrix.nnz


# ==========================================
# 極限算子與調和投影
# ==========================================
@pytest.mark.parametrize("n", range(5))
def test_harmonic_projection_diagonalizes_limit_shift(n, rng):
    coupling = make_rational(8, 5)
    p0 = 4
    grid = LatticeGrid(p0, -40, 40, [0.0], [0.0])
    op = build_twisted_operator("T_qtheta", build_nearest_neighbor_kernel(1, 1, 1.0), coupling, grid)
    theta = rng.uniform(-1, 1, size=(coupling.q, grid.size, 1))
    shifted = limit_field(op.apply(theta), op)
    projected = harmonic_projection(theta, n, coupling)
    lhs = np.zeros_like(projected)
    lhs[:-p0] = projected[p0:]
    rhs = np.exp(2j * np.pi * n / coupling.q) * harmonic_projection(shifted, n, coupling)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_harmonic_projection_errors(rng):
    coupling = make_rational(8, 5)
    theta = rng.uniform(size=(5, 11, 1))
    with pytest.raises(ValueError):
        harmonic_projection(theta, 5, coupling)
    with pytest.raises(GridMismatchError):
        harmonic_projection(theta[:4], 0, coupling)
    with pytest.raises(CouplingError):
        harmonic_projection(rng.uniform(size=(2, 11, 1)), 0, RationalCoupling(4, 2))


def test_modulated_projection_removes_harmonic_phase(rng):
    coupling = make_rational(8, 5)
    xi = np.arange(-20, 21) / 4
    theta = rng.uniform(-1, 1, size=(coupling.q, xi.size, 1))
    for n in range(coupling.q):
        projected = harmonic_projection(theta, n, coupling)
        modulated = modulated_projection(theta, n, coupling, xi)
        assert np.allclose(modulated * np.exp(2j * np.pi * n * xi / coupling.q)[:, None], projected, atol=1e-13)
    assert np.allclose(modulated_projection(theta, 0, coupling, xi), harmonic_projection(theta, 0, coupling))


def test_limit_operator_on_constant_strands(nagumo, nagumo_kernel, nagumo_wave):
    coupling = make_rational(3, 2)
    op = build_twisted_operator("K_qtheta", nagumo_kernel, coupling, nagumo_wave.U0.grid, nagumo,
                                wave=nagumo_wave)
    v = nagumo_wave.Phi_plus.flat()
    L0 = assemble_L0(nagumo_wave, nagumo, nagumo_kernel)
    assert np.allclose(op.apply(np.tile(v, coupling.q)), np.tile(L0 @ v, coupling.q), atol=1e-10)


def test_limit_operator_needs_wave_grid(nagumo, nagumo_kernel, nagumo_wave):
    grid = LatticeGrid(4, -40, 40, [0.0], [1.0])
    with pytest.raises(GridMismatchError):
        build_twisted_operator("K_qtheta", nagumo_kernel, make_rational(3, 2), grid, nagumo, wave=nagumo_wave)


def test_limit_kernel_is_simple(nagumo, nagumo_kernel, nagumo_wave):
    check = limit_kernel_check(nagumo, nagumo_kernel, make_rational(3, 2), nagumo_wave)
    assert check.dimension == 1
    assert check.mismatch < 1e-6
    assert check.passed


def test_limit_resolvent_ratio_finite(nagumo, nagumo_kernel, nagumo_wave):
    ratios = limit_resolvent_ratios(nagumo, nagumo_kernel, make_rational(3, 2), nagumo_wave,
                                    deltas=[0.05], samples=2)
    assert set(ratios) == {0.05}
    assert 0 < ratios[0.05] < np.inf


# ==========================================
# 特徵矩陣與雙曲性掃描
# ==========================================
def test_fhn_characteristic_determinant_at_zero(fhn, fhn_kernel):
    ctx = CharacteristicContext(fhn, fhn_kernel, c0=0.3, r=0.11, lhs_scale=1.6)
    # det(−DG(0)) = rργ + ρ
    assert np.linalg.det(characteristic_matrix(ctx, 0.0)).real == pytest.approx(0.0155, rel=1e-12)


def test_nagumo_characteristic_uses_mixed_linearization(nagumo, nagumo_kernel):
    at_minus = CharacteristicContext(nagumo, nagumo_kernel, c0=0.2, r=0.4, rho=1.0)
    at_plus = CharacteristicContext(nagumo, nagumo_kernel, c0=0.2, r=0.4, rho=0.0)
    assert characteristic_matrix(at_minus, 0.0)[0, 0] == pytest.approx(0.4)
    assert characteristic_matrix(at_plus, 0.0)[0, 0] == pytest.approx(0.6)
    with pytest.raises(ValueError):
        characteristic_matrix(CharacteristicContext(nagumo, nagumo_kernel, 0.2, 0.4, rho=1.5), 0.0)


@pytest.mark.parametrize("coupling", [None, make_rational(8, 5)])
def test_characteristic_matrix_periodicity(coupling, fhn, fhn_kernel):
    ctx = CharacteristicContext(fhn, fhn_kernel, c0=0.3, r=0.11, rho=0.5, lam=0.02, coupling=coupling)
    assert symbol_periodicity_defect(ctx, np.linspace(-10, 10, 41)) < 1e-10


def test_twisted_characteristic_matrix_on_constant_strands(fhn, fhn_kernel):
    coupling = make_rational(8, 5)
    plain = CharacteristicContext(fhn, fhn_kernel, c0=0.3, r=0.11)
    twisted = CharacteristicContext(fhn, fhn_kernel, c0=0.3, r=0.11, coupling=coupling)
    v = np.array([0.3, -1.2])
    for y in (0.0, 0.7, -2.5):
        expected = np.tile(characteristic_matrix(plain, y) @ v, coupling.q)
        assert np.allclose(characteristic_matrix(twisted, y) @ np.tile(v, coupling.q), expected, atol=1e-12)


def test_fhn_scan_is_hyperbolic(fhn, fhn_kernel):
    ctx = CharacteristicContext(fhn, fhn_kernel, c0=0.3, r=0.11, lhs_scale=1.6)
    report = hyperbolicity_scan(ctx)
    assert report.passed
    assert report.min_abs_det > 1e-3


def test_scan_detects_crossing_between_samples():
    # det = 2A(y) − 1/2 在 cos y = 3/4 處為 0
    ctx = CharacteristicContext(linear_model(0.5), build_nearest_neighbor_kernel(1, 1, 1.0), c0=0.0, r=0.1)
    report = hyperbolicity_scan(ctx, rho_grid=(0.0,))
    assert not report.passed
    assert report.min_curve_distance < 1e-8


# ==========================================
# 擬逆與頻譜收斂
# ==========================================
def test_quasi_inverse_recovers_wavespeed_direction(nagumo, nagumo_kernel, nagumo_wave):
    scheme = bdf_scheme(1)
    coupling = make_rational(2, 1)
    U0 = spline_resample(nagumo_wave.U0, 2, 30, q=1)
    derivative = apply_discrete_derivative(scheme, coupling.M, U0).values
    psi = U0.with_values(-derivative, P_minus=np.zeros(1), P_plus=np.zeros(1))
    result = quasi_inverse_solve(nagumo, nagumo_kernel, scheme, coupling, nagumo_wave, psi)
    assert result.gamma == pytest.approx(1.0, abs=1e-8)
    assert np.max(np.abs(result.V.values)) < 1e-8


def test_quasi_inverse_ratio_study(nagumo, nagumo_kernel, nagumo_wave):
    study = quasi_inverse_ratio_study(nagumo, nagumo_kernel, bdf_scheme(1), nagumo_wave, q=1,
                                      p_values=[2, 4], L=20, samples=2)
    assert list(study) == [2.0, 4.0]
    assert all(0 < v < np.inf for v in study.values())


@pytest.mark.parametrize("kind", ["K_kM", "K_star_kM"])
def test_spectral_convergence_estimates_positive(kind, nagumo, nagumo_kernel, nagumo_wave):
    scheme = bdf_scheme(1)
    coupling = make_rational(2, 1)
    grid = hm_grid(coupling, 40, 1)
    op = build_twisted_operator(kind, nagumo_kernel, coupling, grid, nagumo, scheme, nagumo_wave)
    report = spectral_convergence_study(op, nagumo_wave, scheme, [0.05, 0.025], config_hash="abc")
    assert report.adjoint == (kind == "K_star_kM")
    assert all(e > 0 for e in report.estimates)
    assert report.kappa_hat == min(report.estimates)
    with pytest.raises(ValueError):
        spectral_convergence_diagnostic(op, nagumo_wave, scheme, 0.2)


# ==========================================
# 內插與 Δ_M → Δ_{q,θ}
# ==========================================
def _linear_field():
    coupling = make_rational(7, 3)
    profile = restrict(lambda xi: xi, 7, 6, [0.0], [0.0], q=3)
    return embed_isometry(profile, coupling)


def test_linear_interpolation_is_exact_for_linear_profiles():
    field_ = _linear_field()
    xi = np.array([-5.0, 0.1, 3.3])
    values = interpolate(field_, 1)(xi)
    for i in range(field_.q + 1):
        assert np.allclose(values[i, :, 0], xi + i / 7, atol=1e-12)


def test_piecewise_constant_interpolation_on_grid():
    field_ = _linear_field()
    xi = Fraction(9, 7)
    values = interpolate(field_, 0)(float(xi))
    assert np.allclose(values[:, 0, 0], [float(xi) + i / 7 for i in range(4)], atol=1e-12)


def test_interpolation_errors():
    field_ = _linear_field()
    with pytest.raises(ValueError):
        interpolate(field_, 1)(7.0)
    with pytest.raises(ValueError):
        interpolate(field_, 0)(-6.5)
    with pytest.raises(ValueError):
        interpolate(field_, 2)


def test_laplacian_limit_probe_converges():
    kernel = build_nearest_neighbor_kernel(1, 1, 1.0)
    probe = laplacian_limit_probe(kernel, bump_field(2.0), q=2, theta_steps=1, support=2.0)
    norms = np.array(probe.norms)
    assert np.all(np.diff(norms) < 0)
    assert norms[-1] < 1e-3
    assert probe.tail_bound == 0.0


def test_laplacian_limit_probe_rejects_mixed_rotation():
    kernel = build_nearest_neighbor_kernel(1, 1, 1.0)
    with pytest.raises(CouplingError):
        laplacian_limit_probe(kernel, bump_field(2.0), q=3, theta_steps=1, support=2.0,
                              couplings=[make_rational(4, 3), make_rational(5, 3)])


def test_laplacian_limit_default_sequence_uses_powers_of_four():
    kernel = build_nearest_neighbor_kernel(1, 1, 1.0)
    default = laplacian_limit_probe(kernel, bump_field(2.0), q=2, theta_steps=1, support=2.0, exponents=[1, 2, 3])
    assert default.M == tuple((4 ** k * 2 + 1) / 2 for k in (1, 2, 3))
    consecutive = [make_rational(j * 2 + 1, 2) for j in range(1, 7)]
    explicit = laplacian_limit_probe(kernel, bump_field(2.0), q=2, theta_steps=1, support=2.0,
                                     couplings=consecutive)
    assert explicit.M == tuple(j + 0.5 for j in range(1, 7))
