"""
共用測試資料 - Nagumo 波前（最近鄰核，τ = 4）只求解一次
"""
import numpy as np
import pytest

from latticewave.bdf import bdf_scheme
from latticewave.kernel import build_nearest_neighbor_kernel
from latticewave.reaction import fhn_model, nagumo_model
from latticewave.semidiscrete import solve_semidiscrete_wave

NAGUMO_TAU = 4.0
NAGUMO_R = 0.4
NAGUMO_P0 = 8
NAGUMO_L = 60


@pytest.fixture(scope="session")
def nagumo():
    return nagumo_model()


@pytest.fixture(scope="session")
def nagumo_kernel():
    return build_nearest_neighbor_kernel(1, 1, NAGUMO_TAU)


@pytest.fixture(scope="session")
def nagumo_wave(nagumo, nagumo_kernel):
    return solve_semidiscrete_wave(nagumo, nagumo_kernel, NAGUMO_R, NAGUMO_P0, NAGUMO_L,
                                   extension="constant")


@pytest.fixture(scope="session")
def fhn():
    return fhn_model(0.01, 5.0)


@pytest.fixture(scope="session")
def fhn_kernel():
    # h = 0.625
    return build_nearest_neighbor_kernel(2, 1, 1.0 / 0.625 ** 2)


@pytest.fixture
def bdf1():
    return bdf_scheme(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
