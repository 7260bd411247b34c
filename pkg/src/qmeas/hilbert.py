"""Dense linear algebra and state builders on truncated Hilbert spaces.

Operators are plain complex ``numpy`` arrays. Fock spaces are truncated at
photon number ``N`` (dimension ``N + 1``); the annihilation operator lowers
``|n>`` to ``sqrt(n) |n-1>`` and annihilates ``|0>``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalFailureError, UnsupportedSpaceError

# Continuous-variable invariants are asserted only below N - GUARD_BAND.
GUARD_BAND = 4


@dataclass(frozen=True)
class HilbertSpec:
    kind: str
    truncation: int = 1
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("qubit", "fock"):
            raise UnsupportedSpaceError(f"unknown space kind {self.kind!r}")
        if self.truncation < 1:
            raise ValueError("truncation must be a positive integer")
        if self.kind == "qubit" and self.truncation != 1:
            raise ValueError("a qubit has truncation 1 (dimension 2)")

    @classmethod
    def fock(cls, N: int, label: str = "") -> "HilbertSpec":
        return cls("fock", int(N), label)

    @classmethod
    def qubit(cls, label: str = "") -> "HilbertSpec":
        return cls("qubit", 1, label)

    @property
    def dim(self) -> int:
        return self.truncation + 1

    def guarded_dim(self, guard: int = GUARD_BAND) -> int:
        """Dimension of the span of |0>..|N-guard> (never below 1)."""
        if self.kind == "qubit":
            return 2
        return max(self.dim - guard, 1)


def _require_fock(spec: HilbertSpec) -> None:
    if spec.kind != "fock":
        raise UnsupportedSpaceError(f"operation needs a fock space, got {spec.kind}")


# -- predicates ---------------------------------------------------------------

def is_hermitian(op: np.ndarray, tol: float = 1e-12) -> bool:
    op = np.asarray(op)
    return op.ndim == 2 and op.shape[0] == op.shape[1] and np.allclose(op, op.conj().T, atol=tol, rtol=0)


def is_psd(op: np.ndarray, tol: float = 1e-12) -> bool:
    if not is_hermitian(op, tol):
        return False
    return bool(np.linalg.eigvalsh(0.5 * (op + op.conj().T)).min() >= -tol)


def is_trace_one(op: np.ndarray, tol: float = 1e-12) -> bool:
    return abs(np.trace(op) - 1.0) <= tol


def is_state(op: np.ndarray, tol: float = 1e-10) -> bool:
    return is_psd(op, tol) and is_trace_one(op, tol)


def dagger(op: np.ndarray) -> np.ndarray:
    return np.swapaxes(np.conj(op), -1, -2)


# -- bosonic operators -------------------------------------------------------

def annihilation(spec: HilbertSpec) -> np.ndarray:
    _require_fock(spec)
    return np.diag(np.sqrt(np.arange(1, spec.dim, dtype=float)), k=1).astype(complex)


def creation(spec: HilbertSpec) -> np.ndarray:
    return annihilation(spec).conj().T


def number_operator(spec: HilbertSpec) -> np.ndarray:
    _require_fock(spec)
    return np.diag(np.arange(spec.dim, dtype=float)).astype(complex)


def quadratures(spec: HilbertSpec) -> tuple[np.ndarray, np.ndarray]:
    """Return (X1, X2) = ((a + a^dag)/sqrt2, (a - a^dag)/(sqrt2 i))."""
    a = annihilation(spec)
    ad = a.conj().T
    return (a + ad) / math.sqrt(2), (a - ad) / (math.sqrt(2) * 1j)


def basis_ket(spec: HilbertSpec, n: int) -> np.ndarray:
    ket = np.zeros(spec.dim, dtype=complex)
    ket[n] = 1.0
    return ket


def projector(ket: np.ndarray) -> np.ndarray:
    ket = np.asarray(ket, dtype=complex)
    return np.outer(ket, ket.conj())


def number_state(spec: HilbertSpec, n: int) -> np.ndarray:
    return projector(basis_ket(spec, n))


# -- coherent and quadrature states -----------------------------------------

def coherent_amplitudes(alpha, dim: int) -> np.ndarray:
    """Number-basis amplitudes e^{-|a|^2/2} a^n / sqrt(n!) for n < dim.

    ``alpha`` may be an array; the result then has shape ``alpha.shape + (dim,)``.
    Uses the ratio recursion so no factorial overflows.
    """
    alpha = np.asarray(alpha, dtype=complex)
    out = np.empty(alpha.shape + (dim,), dtype=complex)
    out[..., 0] = np.exp(-0.5 * np.abs(alpha) ** 2)
    for n in range(1, dim):
        out[..., n] = out[..., n - 1] * alpha / math.sqrt(n)
    return out


def coherent_ket(alpha: complex, spec: HilbertSpec, normalize: bool = True) -> np.ndarray:
    _require_fock(spec)
    ket = coherent_amplitudes(alpha, spec.dim)
    if normalize:
        ket = ket / np.linalg.norm(ket)
    return ket


def coherent_state(alpha: complex, spec: HilbertSpec, *, with_leakage: bool = False):
    """Density matrix |alpha><alpha| renormalized after truncation.

    With ``with_leakage=True`` returns ``(rho, leakage)`` where leakage is the
    probability mass the untruncated state puts above |N>.
    """
    raw = coherent_ket(alpha, spec, normalize=False)
    mass = float(np.vdot(raw, raw).real)
    rho = projector(raw / math.sqrt(mass))
    if with_leakage:
        return rho, 1.0 - mass
    return rho


def quadrature_overlap(x, alpha) -> np.ndarray:
    """Closed-form wavefunction <x|alpha> of a coherent state in the X1 basis.

    pi^{-1/4} exp[-(x - sqrt2 a)^2 / 2 + (a^2 - |a|^2) / 2]; the second term is
    what makes |<x|a>|^2 a unit-width Gaussian centred on sqrt2 Re(a).
    """
    x = np.asarray(x, dtype=float)
    alpha = np.asarray(alpha, dtype=complex)
    expo = -0.5 * (x - math.sqrt(2) * alpha) ** 2 + 0.5 * (alpha**2 - np.abs(alpha) ** 2)
    return np.pi ** -0.25 * np.exp(expo)


def quadrature_wavefunctions(x, dim: int) -> np.ndarray:
    """Hermite functions <n|x>_1 for n < dim, shape ``(len(x), dim)``.

    Stable three-term recursion psi_{n+1} = sqrt(2/(n+1)) x psi_n - sqrt(n/(n+1)) psi_{n-1}.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    psi = np.empty((x.size, dim))
    psi[:, 0] = np.pi ** -0.25 * np.exp(-0.5 * x**2)
    if dim > 1:
        psi[:, 1] = math.sqrt(2.0) * x * psi[:, 0]
    for n in range(1, dim - 1):
        psi[:, n + 1] = math.sqrt(2.0 / (n + 1)) * x * psi[:, n] - math.sqrt(n / (n + 1)) * psi[:, n - 1]
    return psi


def default_quadrature_half_width(N: int) -> float:
    """Grid half-width L = sqrt(2N) + 4 covering every retained Hermite function."""
    return math.sqrt(2 * N) + 4.0


def default_quadrature_step(width: float = 1 / math.sqrt(2), points_per_width: int = 8) -> float:
    """Step resolving a Gaussian of standard deviation ``width`` by >= 8 points."""
    return width / points_per_width


# -- matrix functions ------------------------------------------------------

def _nilpotency_index(A: np.ndarray, tol: float = 0.0) -> int | None:
    """Smallest k with A^k = 0 when A is strictly triangular, else None."""
    d = A.shape[0]
    if np.all(np.abs(np.tril(A)) <= tol) or np.all(np.abs(np.triu(A)) <= tol):
        power = np.eye(d, dtype=A.dtype)
        for k in range(1, d + 1):
            power = power @ A
            if not np.any(power):
                return k
        return d
    return None


def matrix_exponential(A: np.ndarray) -> np.ndarray:
    """exp(A) by the cheapest exact route available.

    Strictly triangular (nilpotent) input uses the terminating power series,
    Hermitian input uses eigendecomposition, anything else falls back to
    scipy's scaling-and-squaring.
    """
    A = np.asarray(A, dtype=complex)
    d = A.shape[0]
    k = _nilpotency_index(A)
    if k is not None:
        out = np.eye(d, dtype=complex)
        term = np.eye(d, dtype=complex)
        for j in range(1, k):
            term = term @ A / j
            out = out + term
    elif is_hermitian(A, tol=1e-14 * max(1.0, np.abs(A).max())):
        w, v = np.linalg.eigh(0.5 * (A + A.conj().T))
        out = (v * np.exp(w)) @ v.conj().T
    else:
        out = scipy.linalg.expm(A)
    if not np.all(np.isfinite(out)):
        finite = out[np.isfinite(out)]
        raise NumericalFailureError(
            "matrix exponential overflowed", float(np.abs(finite).max()) if finite.size else float("inf")
        )
    return out


def hermitian_function(A: np.ndarray, f) -> np.ndarray:
    """f(A) for Hermitian A via its spectral decomposition."""
    w, v = np.linalg.eigh(0.5 * (A + A.conj().T))
    return (v * f(w)) @ v.conj().T


# -- state ensembles ---------------------------------------------------------

def random_density_matrix(dim: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Hilbert-Schmidt random state G G^dag / tr(G G^dag), G complex Gaussian."""
    rank = dim if rank is None else rank
    g = rng.normal(size=(dim, rank)) + 1j * rng.normal(size=(dim, rank))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_diagonal_state(dim: int, rng: np.random.Generator) -> np.ndarray:
    p = rng.dirichlet(np.ones(dim))
    return np.diag(p).astype(complex)


def thermal_state(nbar: float, spec: HilbertSpec) -> np.ndarray:
    """Geometric photon distribution with mean ``nbar``, renormalized after truncation."""
    _require_fock(spec)
    n = np.arange(spec.dim)
    p = (nbar / (1 + nbar)) ** n / (1 + nbar)
    return np.diag(p / p.sum()).astype(complex)


def fidelity_with_pure(rho: np.ndarray, ket: np.ndarray) -> float:
    return float(np.vdot(ket, rho @ ket).real)
