"""
交互作用核測試
"""
from fractions import Fraction

import numpy as np
import pytest

from latticewave.grid import constant_profile, restrict
from latticewave.kernel import (
    apply_nonlocal_laplacian,
    build_gaussian_kernel,
    build_nearest_neighbor_kernel,
    check_hs1,
    kernel_from_coefficients,
    kernel_from_json,
    kernel_to_json,
    symbol,
    symbol_matrix,
)


def test_gaussian_kernel_normalized_and_truncated():
    kernel = build_gaussian_kernel(2, 1, tau=1.0)
    assert kernel.m_max == 6
    assert kernel.normalization_residual()[0] < 1e-12
    assert kernel.tail_bound <= kernel.tail_tol
    # 非擴散分量沒有耦合
    assert np.all(kernel.coefficients[:, 1] == 0)


@pytest.mark.parametrize("kernel", [
    build_gaussian_kernel(2, 1, tau=2.0),
    build_nearest_neighbor_kernel(2, 1, tau=2.56),
    build_nearest_neighbor_kernel(1, 1, tau=1.0),
])
def test_hs1_passes_for_builtin_kernels(kernel):
    report = check_hs1(kernel)
    assert report.passed
    assert all(v > 0 for v in report.min_symbol)


def test_hs1_rejects_sign_changing_kernel():
    # α_1 = −1, α_2 = 1/2：∑m²α_m = 1，但 A(π) = −2
    kernel = kernel_from_coefficients([[-1.0], [0.5]], tau=1.0)
    report = check_hs1(kernel)
    assert report.normalization_ok
    assert not report.positivity_ok
    assert report.min_symbol[0] == pytest.approx(-2.0)
    assert not report.passed


def test_hs1_rejects_unnormalized_kernel():
    kernel = kernel_from_coefficients([[0.5]], tau=1.0)
    report = check_hs1(kernel)
    assert not report.normalization_ok
    assert not report.passed


def test_symbol_is_periodic_and_vanishes_at_zero():
    kernel = build_gaussian_kernel(1, 1, tau=1.0)
    z = np.linspace(-3.0, 3.0, 13)
    assert symbol(kernel, 0, 0.0) == 0.0
    assert np.allclose(symbol(kernel, 0, z + 2 * np.pi), symbol(kernel, 0, z), atol=1e-13)


def test_symbol_rejects_non_diffusive_component():
    kernel = build_nearest_neighbor_kernel(2, 1, tau=1.0)
    with pytest.raises(IndexError):
        symbol(kernel, 1, 0.3)


def test_symbol_matrix_is_diagonal_of_symbols():
    kernel = build_nearest_neighbor_kernel(2, 1, tau=3.0)
    matrix = symbol_matrix(kernel, 0.7)
    assert matrix.shape == (2, 2)
    assert matrix[0, 0] == pytest.approx(symbol(kernel, 0, 0.7))
    assert matrix[1, 1] == 0.0
    assert matrix[0, 1] == matrix[1, 0] == 0.0


def test_laplacian_annihilates_constants():
    kernel = build_gaussian_kernel(2, 1, tau=3.0)
    profile = constant_profile([0.7, -0.2], p=4, L=10)
    out = apply_nonlocal_laplacian(kernel, profile)
    assert np.max(np.abs(out.values)) < 1e-13


def test_laplacian_of_quadratic_is_two_tau():
    kernel = build_gaussian_kernel(1, 1, tau=1.5)
    p, L = 2, 20
    profile = restrict(lambda xi: xi ** 2, p, L, [0.0], [0.0], extension="linear")
    out = apply_nonlocal_laplacian(kernel, profile)
    margin = kernel.m_max * p
    interior = out.values[margin:-margin, 0]
    # τ∑α_m·2m² = 2τ
    assert np.allclose(interior, 2 * 1.5, atol=1e-10)


def test_laplacian_rejects_short_window():
    kernel = build_gaussian_kernel(1, 1, tau=1.0)
    profile = constant_profile([0.0], p=1, L=Fraction(3))
    with pytest.raises(ValueError):
        apply_nonlocal_laplacian(kernel, profile)


def test_kernel_json_preserves_coefficients():
    kernel = build_gaussian_kernel(2, 1, tau=2.5)
    restored = kernel_from_json(kernel_to_json(kernel))
    assert restored.m_max == kernel.m_max
    assert np.array_equal(restored.coefficients, kernel.coefficients)
    assert restored.tau == kernel.tau
