import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from qmeas.errors import UnsupportedSpaceError
from qmeas.hilbert import (
    HilbertSpec,
    annihilation,
    basis_ket,
    coherent_state,
    creation,
    is_state,
    matrix_exponential,
    number_operator,
    projector,
    quadrature_overlap,
    quadrature_wavefunctions,
    random_density_matrix,
    thermal_state,
)


def test_annihilation_n2():
    a = annihilation(HilbertSpec.fock(2))
    expected = np.zeros((3, 3))
    expected[0, 1] = 1.0
    expected[1, 2] = math.sqrt(2)
    np.testing.assert_array_equal(a, expected)
    assert not np.any(a @ basis_ket(HilbertSpec.fock(2), 0))


def test_number_operator_examples():
    spec = HilbertSpec.fock(5)
    a = annihilation(spec)
    ket = basis_ket(spec, 3)
    np.testing.assert_allclose(a.conj().T @ a @ ket, 3 * ket, atol=1e-14)
    np.testing.assert_array_equal(number_operator(HilbertSpec.fock(1)), np.diag([0, 1]))
    assert np.trace(number_operator(HilbertSpec.fock(3))).real == 6


@given(st.integers(min_value=1, max_value=30))
def test_commutator_has_truncation_correction(N):
    spec = HilbertSpec.fock(N)
    a, ad = annihilation(spec), creation(spec)
    corr = np.eye(spec.dim) - (N + 1) * projector(basis_ket(spec, N))
    np.testing.assert_allclose(a @ ad - ad @ a, corr, atol=1e-12)


def test_vacuum_coherent_state_is_exact():
    rho = coherent_state(0.0, HilbertSpec.fock(6))
    expected = np.zeros((7, 7))
    expected[0, 0] = 1
    np.testing.assert_array_equal(rho, expected)


def test_coherent_mean_and_ratio():
    spec = HilbertSpec.fock(20)
    rho = coherent_state(1.0, spec)
    assert abs(np.trace(rho @ number_operator(spec)).real - 1.0) < 1e-9
    assert abs(rho[1, 0] / rho[0, 0] - 1.0) < 1e-12


def test_coherent_leakage_matches_poisson_tail():
    rho, leak = coherent_state(2.0, HilbertSpec.fock(10), with_leakage=True)
    tail = 1 - math.exp(-4) * sum(4**n / math.factorial(n) for n in range(11))
    assert abs(leak - tail) < 1e-14
    assert is_state(rho)


def test_quadrature_overlap_examples():
    assert abs(quadrature_overlap(0.0, 0.0) - np.pi**-0.25) < 1e-15
    x = np.linspace(-12, 12, 4801)
    dens = np.abs(quadrature_overlap(x, 0.4 + 0.9j)) ** 2
    assert abs(np.sum(dens) * (x[1] - x[0]) - 1) < 1e-10


@given(st.floats(-2, 2), st.floats(-2, 2))
def test_quadrature_density_is_shifted_gaussian(re, im):
    alpha = complex(re, im)
    x = np.linspace(-6, 6, 13)
    lhs = np.abs(quadrature_overlap(x, alpha)) ** 2
    rhs = np.pi**-0.5 * np.exp(-((x - (alpha + alpha.conjugate()).real / math.sqrt(2)) ** 2))
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12, atol=1e-300)


def test_hermite_functions_match_coherent_overlap():
    # <x|alpha> = sum_n <x|n><n|alpha>, truncated where the Poisson tail is negligible
    x = np.linspace(-4, 4, 9)
    alpha = 0.6 - 0.3j
    n = np.arange(40)
    amps = np.exp(-abs(alpha) ** 2 / 2) * alpha**n / np.sqrt([float(math.factorial(k)) for k in n])
    series = quadrature_wavefunctions(x, 40) @ amps
    np.testing.assert_allclose(series, quadrature_overlap(x, alpha), atol=1e-12)


def test_matrix_exponential_examples():
    np.testing.assert_allclose(matrix_exponential(np.zeros((3, 3))), np.eye(3))
    np.testing.assert_allclose(matrix_exponential(np.diag([0, math.log(2)])), np.diag([1, 2]), atol=1e-15)
    a = annihilation(HilbertSpec.fock(3))
    y = 0.8 - 0.2j
    series = sum(np.linalg.matrix_power(y * a, k) / math.factorial(k) for k in range(4))
    np.testing.assert_allclose(matrix_exponential(y * a), series, atol=1e-15)
    np.testing.assert_allclose(matrix_exponential(y * a), scipy.linalg.expm(y * a), atol=1e-13)


def test_qubit_spaces_reject_fock_operators():
    with pytest.raises(UnsupportedSpaceError):
        annihilation(HilbertSpec.qubit())
    with pytest.raises(UnsupportedSpaceError):
        HilbertSpec("spin", 1)


@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_random_states_are_states(dim, seed):
    assert is_state(random_density_matrix(dim, np.random.default_rng(seed)))


@given(st.floats(0, 5))
def test_thermal_state_normalized(nbar):
    rho = thermal_state(nbar, HilbertSpec.fock(15))
    assert is_state(rho)
