"""
BDF 係數與離散導數測試
"""
from fractions import Fraction

import numpy as np
import pytest

from latticewave.bdf import (
    apply_discrete_derivative,
    bdf_scheme,
    convergence_order_probe,
    dahlquist_roots,
    derivative_matrix,
    derive_bdf_coefficients,
    discrete_derivative,
    step_offset,
)
from latticewave.errors import MisalignedGridError
from latticewave.grid import restrict


@pytest.mark.parametrize("k", range(1, 7))
def test_table_matches_derivation(k):
    table = bdf_scheme(k)
    derived = derive_bdf_coefficients(k)
    assert table.mu == derived.mu
    assert table.beta == derived.beta


@pytest.mark.parametrize("k", range(1, 7))
def test_consistency_is_exact(k):
    total, first_moment = bdf_scheme(k).consistency()
    assert total == 0
    assert first_moment == 0


def test_order_outside_range_rejected():
    with pytest.raises(ValueError):
        bdf_scheme(7)
    with pytest.raises(ValueError):
        bdf_scheme(0)


@pytest.mark.parametrize("k", range(1, 7))
def test_polynomials_up_to_degree_k_are_exact(k):
    scheme = bdf_scheme(k)
    probe = convergence_order_probe(scheme, lambda x: x ** k, lambda x: k * x ** (k - 1), [4, 8])
    assert max(probe.errors) < 1e-9


@pytest.mark.parametrize("k", range(1, 5))
def test_convergence_order_on_smooth_function(k):
    scheme = bdf_scheme(k)
    probe = convergence_order_probe(scheme, np.exp, np.exp, [32, 64, 128, 256])
    assert probe.passes(k)
    assert probe.errors[-1] < probe.errors[0]


def test_probe_rejects_order_above_scheme():
    with pytest.raises(ValueError):
        convergence_order_probe(bdf_scheme(2), np.sin, np.cos, [4, 8], l=3)


def test_step_offset_requires_integer_multiple():
    assert step_offset(Fraction(8, 5), 8) == 5
    with pytest.raises(MisalignedGridError):
        step_offset(Fraction(8, 5), 4)


def test_matrix_agrees_with_pointwise_derivative():
    scheme = bdf_scheme(3)
    M = Fraction(4, 3)
    profile = restrict(lambda xi: np.tanh(xi), 4, 10, [-1.0], [1.0])
    full = apply_discrete_derivative(scheme, M, profile)
    for j in (-20, -3, 0, 7, 25):
        pointwise = discrete_derivative(scheme, M, profile, j)
        assert pointwise[0] == pytest.approx(full.values[j + profile.half_width, 0], abs=1e-12)


def test_adjoint_is_transpose():
    scheme = bdf_scheme(2)
    profile = restrict(lambda xi: np.zeros_like(xi), 3, 10, [0.0], [0.0])
    D, _ = derivative_matrix(scheme, Fraction(3, 2), profile.grid)
    D_star, _ = derivative_matrix(scheme, Fraction(3, 2), profile.grid, adjoint=True)
    rng = np.random.default_rng(0)
    # 支撐遠離視窗端點時 ⟨𝒟Φ, Ψ⟩ = ⟨Φ, 𝒟*Ψ⟩
    phi = np.zeros(profile.size)
    psi = np.zeros(profile.size)
    phi[10:-10] = rng.uniform(-1, 1, profile.size - 20)
    psi[10:-10] = rng.uniform(-1, 1, profile.size - 20)
    assert (D @ phi) @ psi == pytest.approx(phi @ (D_star @ psi), abs=1e-10)


def test_dahlquist_roots_inside_unit_disk_for_stable_decay():
    for k in (1, 2, 3):
        roots = dahlquist_roots(bdf_scheme(k), -1.0)
        assert np.all(np.abs(roots) < 1)
    # BDF1：ζ = 1/(1 − z)
    assert dahlquist_roots(bdf_scheme(1), -1.0)[0] == pytest.approx(0.5)
