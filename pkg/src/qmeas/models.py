"""The six measurement models on truncated spaces.

Each constructor returns a :class:`ModelBundle` holding the instrument, the
reference observable X, and closed-form evaluators for the coarse-graining
kernel p(y|x), the scalar q(x;y) and the sufficient statistic x~(x;y).

Conventions:

* instrument grid weights are reference-measure masses mu0(cell), so every
  Y density, kernel and q value is a density with respect to mu0 (the
  continuous models divide the Lebesgue-density expressions by the reference
  density);
* the unassigned statistic (q = 0) is encoded as NaN;
* measurement-operator exponentials are built as terminating power series
  in the truncated annihilation operator times diagonal exponentials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gammaln, xlogy
from scipy.stats import nbinom

from .entropy import (
    DENSITY_FLOOR,
    ConservationReport,
    ShannonBalance,
    mutual_information,
    prior_joint,
    relative_entropy,
    report_from_parts,
    shannon_entropy,
)
from .errors import InvalidModelError, ParameterRangeError
from .hilbert import (
    GUARD_BAND,
    HilbertSpec,
    annihilation,
    coherent_amplitudes,
    default_quadrature_half_width,
    is_state,
    matrix_exponential,
    quadrature_wavefunctions,
)
from .measurement import (
    Distribution,
    KrausInstrument,
    OutcomeGrid,
    PovmDensity,
    povm_distribution,
)

NULL = np.nan
LEAK_TOL = 1e-8
MAX_DENSE_OUTCOMES = 400
MAX_COUNTER_OUTCOMES = 5_000_000
MAX_DEFAULT_GRID = 20_000


@dataclass
class AnalyticCertificate:
    """Closed-form condition data; every callable maps label arrays to a table.

    ``kernel(x, y)`` -> p(y|x) with shape (len(x), len(y)); ``q(x, y)`` and
    ``x_tilde(x, y)`` take X labels of the instrument's output side.
    """

    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    q: Callable[[np.ndarray, np.ndarray], np.ndarray]
    x_tilde: Callable[[np.ndarray, np.ndarray], np.ndarray]
    jacobian: float | None = None
    ban: bool | None = None


@dataclass
class ModelBundle:
    name: str
    inst: KrausInstrument
    povmX: PovmDensity
    analytic: AnalyticCertificate | None = None
    params: dict = field(default_factory=dict)
    notes: str = ""
    povmX_out: PovmDensity | None = None
    # effect densities at arbitrary (off-grid) labels: array of n labels -> (n, d, d)
    effect_at: Callable[[np.ndarray], np.ndarray] | None = None
    guard: int = 0
    pvm: bool = True
    state_dim: int | None = None
    conservation_tol: float = 1e-9
    extras: dict = field(default_factory=dict)

    @property
    def readout(self) -> PovmDensity:
        return self.povmX if self.povmX_out is None else self.povmX_out

    @property
    def discrete(self) -> bool:
        return self.povmX.grid.kind == "discrete" and self.inst.grid.kind == "discrete"

    def random_state_pair(self, rng: np.random.Generator, diagonal: bool = False):
        """Two independent states on the guarded input subspace (HS ensemble)."""
        from .hilbert import random_density_matrix, random_diagonal_state

        d = self.inst.dim_in
        k = self.state_dim or d
        out = []
        for _ in range(2):
            small = random_diagonal_state(k, rng) if diagonal else random_density_matrix(k, rng)
            rho = np.zeros((d, d), dtype=complex)
            rho[:k, :k] = small
            out.append(rho)
        return tuple(out)


def _diag_pvm(dim: int, name: str = "X", labels=None) -> PovmDensity:
    grid = OutcomeGrid.discrete(np.arange(dim) if labels is None else labels)
    return PovmDensity(grid, np.eye(dim), diagonal=True, name=name)


# -- QND ----------------------------------------------------------------------

def qnd_model(p_yz_given_x, phases=None, y_labels=None) -> ModelBundle:
    """Kraus M_yz = sum_x e^{i theta(x;y,z)} sqrt(p(y,z|x)) |x><x|.

    ``p_yz_given_x`` has shape (X, Y) or (X, Y, Z) and must sum to 1 over (y, z)
    for each x; ``phases`` matches its shape.
    """
    p = np.asarray(p_yz_given_x, dtype=float)
    if p.ndim == 2:
        p = p[:, :, None]
    if p.ndim != 3 or np.any(p < 0):
        raise InvalidModelError("p(y,z|x) must be a nonnegative (X, Y[, Z]) array")
    if not np.allclose(p.sum(axis=(1, 2)), 1.0, atol=1e-12, rtol=0):
        raise InvalidModelError("p(y,z|x) is not normalized over (y, z)")
    if phases is None:
        theta = np.zeros_like(p)
    else:
        theta = np.asarray(phases, dtype=float)
        if theta.ndim == 2:
            theta = theta[:, :, None]
        theta = np.broadcast_to(theta, p.shape)
    n_x, n_y, n_z = p.shape
    amp = np.sqrt(p) * np.exp(1j * theta)  # (X, Y, Z)
    kraus = np.zeros((n_y, n_z, n_x, n_x), dtype=complex)
    idx = np.arange(n_x)
    kraus[:, :, idx, idx] = np.transpose(amp, (1, 2, 0))
    grid = OutcomeGrid.discrete(np.arange(n_y) if y_labels is None else y_labels)
    inst = KrausInstrument(grid, kraus, name="qnd")
    p_y_x = p.sum(axis=2)

    def kernel(x, y):
        return p_y_x[np.ix_(np.asarray(x, int), np.asarray(y, int))]

    def q(x, y):
        return kernel(x, y)

    def x_tilde(x, y):
        x = np.asarray(x, float)
        qv = q(x.astype(int), y)
        return np.where(qv > 0, x[:, None] + 0 * qv, NULL)

    analytic = AnalyticCertificate(kernel, q, x_tilde, jacobian=1.0, ban=True)
    return ModelBundle("qnd", inst, _diag_pvm(n_x), analytic, {"dim": n_x, "n_y": n_y, "n_z": n_z},
                       "Kraus operators diagonal in the X basis; Bayes update of p^X.")


def symmetric_kernel(dim: int, eps: float) -> np.ndarray:
    """p(y|x) = 1 - eps on the diagonal, eps/(dim-1) elsewhere (binary-symmetric for dim=2)."""
    k = np.full((dim, dim), eps / (dim - 1))
    np.fill_diagonal(k, 1 - eps)
    return k


# -- two-level --------------------------------------------------------------

def two_level_model(phi_0: np.ndarray, phi_1: np.ndarray) -> ModelBundle:
    """E_y(rho) = phi_y <y|rho|y> on a qubit with X the computational PVM."""
    phis = [np.asarray(phi_0, complex), np.asarray(phi_1, complex)]
    for phi in phis:
        if phi.shape != (2, 2) or not is_state(phi):
            raise InvalidModelError("phi_y must be valid qubit density matrices")
    kraus = np.zeros((2, 2, 2, 2), dtype=complex)
    for y, phi in enumerate(phis):
        w, v = np.linalg.eigh(phi)
        for k in range(2):
            kraus[y, k] = math.sqrt(max(w[k], 0.0)) * np.outer(v[:, k], np.eye(2)[y])
    inst = KrausInstrument(OutcomeGrid.discrete(2), kraus, name="two_level")
    q_tab = np.array([[phis[y][x, x].real for y in range(2)] for x in range(2)])

    def kernel(x, y):
        return (np.asarray(x)[:, None] == np.asarray(y)[None, :]).astype(float)

    def q(x, y):
        return q_tab[np.ix_(np.asarray(x, int), np.asarray(y, int))]

    def x_tilde(x, y):
        qv = q(x, y)
        return np.where(qv > 0, np.asarray(y, float)[None, :] + 0 * qv, NULL)

    ban = all(np.allclose(phi, np.diag(np.diag(phi))) and np.isclose(np.max(np.diag(phi).real), 1.0) for phi in phis)
    analytic = AnalyticCertificate(kernel, q, x_tilde, jacobian=None, ban=ban)
    return ModelBundle("two_level", inst, _diag_pvm(2), analytic, {},
                       "Destructive sharp measurement; post-state phi_y independent of rho.")


# -- photon counting -------------------------------------------------------

def photon_count_kernel(m, n, gamma_t: float) -> np.ndarray:
    """Binomial p(m|n;t) = C(n,m) (1-e^{-gt})^m e^{-gt(n-m)}, zero for m > n."""
    m = np.asarray(m, float)
    n = np.asarray(n, float)
    c = -math.expm1(-gamma_t)
    with np.errstate(divide="ignore", invalid="ignore"):
        logp = (
            gammaln(n + 1) - gammaln(m + 1) - gammaln(np.maximum(n - m, 0) + 1)
            + xlogy(m, c) - gamma_t * (n - m)
        )
    return np.where((m <= n) & (m >= 0), np.exp(logp), 0.0)


def photon_counting_model(gamma: float, t: float, spec: HilbertSpec, omega: float = 0.0) -> ModelBundle:
    """M_m = sqrt((1-e^{-gt})^m / m!) exp[-(i w + g/2) t n] a^m, m = 0..N."""
    gt = gamma * t
    if gt <= 0:
        raise InvalidModelError("gamma * t must be positive")
    N = spec.truncation
    a = annihilation(spec)
    n = np.arange(spec.dim)
    decay = np.diag(np.exp(-(1j * omega + gamma / 2) * t * n))
    c = -math.expm1(-gt)
    kraus = np.zeros((N + 1, 1, spec.dim, spec.dim), dtype=complex)
    a_m = np.eye(spec.dim, dtype=complex)
    for m in range(N + 1):
        pref = math.exp(0.5 * (m * math.log(c) - math.lgamma(m + 1))) if m else 1.0
        kraus[m, 0] = pref * decay @ a_m
        a_m = a_m @ a
    inst = KrausInstrument(OutcomeGrid.discrete(N + 1), kraus, name="photon_counting")

    def kernel(x, y):
        return photon_count_kernel(np.asarray(y)[None, :], np.asarray(x)[:, None], gt)

    def x_tilde(x, y):
        tgt = np.asarray(x, float)[:, None] + np.asarray(y, float)[None, :]
        return np.where(tgt <= N, tgt, NULL)

    def q(x, y):
        tgt = np.asarray(x, float)[:, None] + np.asarray(y, float)[None, :]
        val = photon_count_kernel(np.asarray(y)[None, :] + 0 * tgt, tgt, gt)
        return np.where(tgt <= N, val, 0.0)

    analytic = AnalyticCertificate(kernel, q, x_tilde, jacobian=1.0, ban=True)
    return ModelBundle(
        "photon_counting", inst, _diag_pvm(spec.dim, "N"), analytic,
        {"gamma": gamma, "t": t, "N": N, "omega": omega},
        "Destructive photon counting; x~(n;m) = n + m.",
    )


# -- quantum counter ---------------------------------------------------------

def counter_kernel(m, n, gamma_t: float) -> np.ndarray:
    """p^qc(m|n;t) = C(n+m, m) (e^{gt}-1)^m e^{-gt(n+m+1)} (negative binomial)."""
    m = np.asarray(m, float)
    n = np.asarray(n, float)
    logk = gamma_t + math.log(-math.expm1(-gamma_t))  # ln(e^{gt} - 1)
    logp = gammaln(n + m + 1) - gammaln(m + 1) - gammaln(n + 1) + m * logk - gamma_t * (n + m + 1)
    return np.where((m >= 0) & (n >= 0), np.exp(logp), 0.0)


def counter_amplitudes(gamma_t: float, n_in: int, m_max: int) -> np.ndarray:
    """Matrix elements <n+m| M^qc_m |n>, shape (m_max+1, n_in).

    M^qc_m = sqrt((e^{gt}-1)^m / m!) exp(-gt a a^dag / 2) (a^dag)^m, with a a^dag = n + 1
    acting on |n+m>, evaluated in log space.
    """
    m = np.arange(m_max + 1, dtype=float)[:, None]
    n = np.arange(n_in, dtype=float)[None, :]
    logk = gamma_t + math.log(-math.expm1(-gamma_t))
    log_amp = 0.5 * (m * logk - gammaln(m + 1)) - 0.5 * gamma_t * (n + m + 1) + 0.5 * (gammaln(n + m + 1) - gammaln(n + 1))
    return np.exp(log_amp)


def counter_outcome_cutoff(gamma_t: float, n_max: int, leak_tol: float = LEAK_TOL) -> int:
    """Smallest M with sum_{m > M} p^qc(m | n_max) < leak_tol."""
    p = math.exp(-gamma_t)
    m_cut = int(nbinom.isf(leak_tol, n_max + 1, p))
    while nbinom.sf(m_cut, n_max + 1, p) >= leak_tol:
        m_cut += 1
    if m_cut > MAX_COUNTER_OUTCOMES:
        raise ParameterRangeError(f"gamma*t = {gamma_t} needs {m_cut} counter outcomes")
    return m_cut


def poisson_kernel_effects(x, n_max: int) -> np.ndarray:
    """Diagonals of E^X_x = p^X(x|n), p^X(x|n) = e^{-x} x^n / n!, shape (len(x), n_max+1)."""
    x = np.asarray(x, float)[:, None]
    n = np.arange(n_max + 1, dtype=float)[None, :]
    with np.errstate(divide="ignore"):
        return np.exp(-x + xlogy(n, x) - gammaln(n + 1))


def counter_x_kernel(m, x, gamma_t: float) -> np.ndarray:
    """p^qc(m|x) = [(e^{gt}-1) x]^m / m! exp[-(e^{gt}-1) x]  (Poisson in m)."""
    k = math.expm1(gamma_t)
    m = np.asarray(m, float)
    x = np.asarray(x, float)
    return np.exp(xlogy(m, k * x) - gammaln(m + 1) - k * x)


def default_counter_x_grid(step: float = 0.05, hi: float = 40.0) -> OutcomeGrid:
    return OutcomeGrid.uniform(0.0, hi, step, rule="simpson")


@dataclass
class CounterModel:
    """Quantum counter with its two reference observables."""

    gamma: float
    t: float
    spec: HilbertSpec
    x_grid: OutcomeGrid
    m_max: int
    number: ModelBundle | None
    poisson: ModelBundle | None
    state_dim: int

    @property
    def gamma_t(self) -> float:
        return self.gamma * self.t


def quantum_counter_model(
    gamma: float,
    t: float,
    spec: HilbertSpec,
    x_grid: OutcomeGrid | None = None,
    leak_tol: float = LEAK_TOL,
    dense: bool | None = None,
    guard: int = GUARD_BAND,
) -> CounterModel:
    """Quantum counter on input states |0>..|N>; Kraus operators raise the photon number.

    The dense bundles use rectangular Kraus operators into |0>..|N + M_max>;
    they are built only while M_max stays below ``MAX_DENSE_OUTCOMES``
    (``dense=None``) because the output space grows like e^{gt}.  The
    number-diagonal routes (:func:`counter_number_report`,
    :func:`counter_x_report`) cover every gamma*t.
    """
    gt = gamma * t
    if gt <= 0:
        raise InvalidModelError("gamma * t must be positive")
    if gt > 30:
        raise ParameterRangeError("gamma * t above 30 overflows e^{gt} N")
    x_grid = default_counter_x_grid() if x_grid is None else x_grid
    N = spec.truncation
    m_max = counter_outcome_cutoff(gt, N, leak_tol)
    if dense is None:
        dense = m_max <= MAX_DENSE_OUTCOMES
    state_dim = max(N + 1 - guard, 1)
    number = poisson = None
    if dense:
        number, poisson = _dense_counter_bundles(gamma, t, spec, x_grid, m_max, state_dim)
    return CounterModel(gamma, t, spec, x_grid, m_max, number, poisson, state_dim)


def _dense_counter_bundles(gamma, t, spec, x_grid, m_max, state_dim):
    gt = gamma * t
    N = spec.truncation
    d_in, d_out = N + 1, N + m_max + 1
    amp = counter_amplitudes(gt, d_in, m_max)
    kraus = np.zeros((m_max + 1, 1, d_out, d_in), dtype=complex)
    n = np.arange(d_in)
    for m in range(m_max + 1):
        kraus[m, 0, n + m, n] = amp[m]
    inst = KrausInstrument(OutcomeGrid.discrete(m_max + 1), kraus, name="quantum_counter")
    params = {"gamma": gamma, "t": t, "N": N, "m_max": m_max}

    def n_kernel(x, y):
        return counter_kernel(np.asarray(y)[None, :], np.asarray(x)[:, None], gt)

    def n_tilde(x, y):
        tgt = np.asarray(x, float)[:, None] - np.asarray(y, float)[None, :]
        return np.where((tgt >= 0) & (tgt <= N), tgt, NULL)

    def n_q(x, y):
        tgt = n_tilde(x, y)
        val = counter_kernel(np.asarray(y)[None, :] + 0 * tgt, np.nan_to_num(tgt), gt)
        return np.where(np.isnan(tgt), 0.0, val)

    number = ModelBundle(
        "quantum_counter_number", inst, _diag_pvm(d_in, "N"),
        AnalyticCertificate(n_kernel, n_q, n_tilde, jacobian=1.0, ban=True),
        params, "Number observable; x~(n;m) = n - m.",
        povmX_out=_diag_pvm(d_out, "N_out"), state_dim=state_dim,
    )

    scale = math.exp(gt)
    out_grid = x_grid.scaled(scale)
    povm_in = PovmDensity(x_grid, poisson_kernel_effects(x_grid.labels, N).astype(complex), diagonal=True, name="X")
    povm_out = PovmDensity(out_grid, poisson_kernel_effects(out_grid.labels, N + m_max).astype(complex),
                           diagonal=True, name="X_out")

    def x_kernel(x, y):
        return counter_x_kernel(np.asarray(y)[None, :], np.asarray(x)[:, None], gt)

    def x_tilde(x, y):
        return np.asarray(x, float)[:, None] / scale + 0 * np.asarray(y, float)[None, :]

    def x_q(x, y):
        return math.exp(-gt) * counter_x_kernel(np.asarray(y)[None, :], x_tilde(x, y), gt)

    def effect_at(x):
        e = poisson_kernel_effects(np.ravel(x), N)
        out = np.zeros((e.shape[0], N + 1, N + 1), dtype=complex)
        out[:, np.arange(N + 1), np.arange(N + 1)] = e
        return out

    poisson = ModelBundle(
        "quantum_counter_x", inst, povm_in,
        AnalyticCertificate(x_kernel, x_q, x_tilde, jacobian=math.exp(-gt), ban=False),
        params, "Poisson-kernel observable; x~(x;m) = e^{-gt} x, read out on the rescaled grid.",
        povmX_out=povm_out, effect_at=effect_at, pvm=False, state_dim=state_dim, conservation_tol=1e-6,
    )
    return number, poisson


def _counter_post_weights(gamma_t: float, p_n: np.ndarray, m_max: int):
    """Outcome probabilities and post-measurement window distributions.

    Row m of the window table is the number distribution of rho_m on
    |m>..|m + N>, computed from the Kraus amplitudes.
    """
    amp2 = counter_amplitudes(gamma_t, p_n.size, m_max) ** 2  # (M+1, N+1)
    joint = amp2 * p_n[None, :]
    p_m = joint.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        window = np.where(p_m[:, None] > 0, joint / p_m[:, None], 0.0)
    return p_m, window


def counter_number_report(gamma_t: float, rho: np.ndarray, sigma: np.ndarray, m_max: int) -> ConservationReport:
    """Conservation report for the number observable, any gamma*t.

    Only photon-number populations enter, and each post-measurement state lives
    on the window |m>..|m+N>, so all sums are finite and exact.
    """
    pr = np.clip(np.diag(rho).real, 0, None)
    ps = np.clip(np.diag(sigma).real, 0, None)
    pm_r, win_r = _counter_post_weights(gamma_t, pr, m_max)
    pm_s, win_s = _counter_post_weights(gamma_t, ps, m_max)
    y_grid = OutcomeGrid.discrete(m_max + 1)
    x_grid = OutcomeGrid.discrete(pr.size)
    d_post = np.array([_kl_vec(win_r[m], win_s[m]) if pm_r[m] > DENSITY_FLOOR else 0.0 for m in range(m_max + 1)])
    return report_from_parts(
        Distribution(y_grid, pm_r), Distribution(y_grid, pm_s),
        Distribution(x_grid, pr), Distribution(x_grid, ps), d_post,
    )


def counter_number_shannon(gamma_t: float, rho: np.ndarray, m_max: int) -> ShannonBalance:
    """Shannon balance for the number observable on the diagonal route.

    The prior joint is p^qc(m|n) p_rho(n); post-measurement number entropies
    come from the Kraus window distributions.
    """
    pr = np.clip(np.diag(rho).real, 0, None)
    pm, win = _counter_post_weights(gamma_t, pr, m_max)
    x_grid = OutcomeGrid.discrete(pr.size)
    y_grid = OutcomeGrid.discrete(m_max + 1)
    kernel = counter_kernel(np.arange(m_max + 1)[None, :], np.arange(pr.size)[:, None], gamma_t)
    px = Distribution(x_grid, pr)
    mi = mutual_information(prior_joint(px, kernel, y_grid))
    h_post = -np.sum(xlogy(win, win), axis=1)
    mask = pm > DENSITY_FLOOR
    drop = shannon_entropy(px) - float(np.sum(pm[mask] * h_post[mask]))
    return ShannonBalance(mi, drop, drop - mi)


def _kl_vec(p: np.ndarray, q: np.ndarray) -> float:
    mask = p > DENSITY_FLOOR
    if np.any(q[mask] <= DENSITY_FLOOR):
        return float("inf")
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def _gamma_mixture_nodes(m: np.ndarray, n_win: int, points: int):
    """Log-space quadrature nodes s (x = e^s) for Gamma mixtures of shapes m+1..m+n_win.

    Returns (s, ds) with s shaped (len(m), points). The integrand in s is
    smooth and decays on both sides, so the trapezoid rule converges
    geometrically.
    """
    lo_shape = m + 1.0
    hi_shape = m + n_win
    centre = np.log(lo_shape)
    s_lo = centre - 40.0 / lo_shape - 12.0 / np.sqrt(lo_shape)
    s_hi = np.log(hi_shape + 12.0 * np.sqrt(hi_shape) + 40.0)
    u = np.linspace(0.0, 1.0, points)[None, :]
    s = s_lo[:, None] + (s_hi - s_lo)[:, None] * u
    ds = (s_hi - s_lo) / (points - 1)
    return s, ds


def gamma_mixture_densities(weights: np.ndarray, m: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Density in x = e^s of sum_k weights[m, k] Gamma(shape m+k+1), times the Jacobian e^s.

    Evaluated as e^{-x} x^{m+1} / m! * sum_k w_k x^k m!/(m+k)! with a running
    ratio so nothing overflows for large m.
    """
    x = np.exp(s)
    mm = m[:, None].astype(float)
    base = np.exp(-x + (mm + 1.0) * s - gammaln(mm + 1.0))  # Gamma(m+1) density times x
    acc = np.zeros_like(x)
    term = base
    for k in range(weights.shape[1]):
        acc += weights[:, k:k + 1] * term
        term = term * x / (mm + k + 1.0)
    return acc


def _node_count(m_start: int) -> int:
    # low outcomes have long lower tails in log space; high ones are near-Gaussian
    return 240 if m_start < 1000 else 48


def counter_x_post(gamma_t: float, rho: np.ndarray, sigma: np.ndarray, m_max: int, chunk: int = 4096):
    """Per-outcome D(p^X_{rho_m} || p^X_{sigma_m}) and H_{rho_m}(X) for the Poisson observable.

    Post-measurement X densities are Gamma mixtures built from the Kraus
    window distributions and integrated on per-outcome log-space grids, so no
    use is made of the analytic sufficient statistic.
    """
    pr = np.clip(np.diag(rho).real, 0, None)
    ps = np.clip(np.diag(sigma).real, 0, None)
    pm_r, win_r = _counter_post_weights(gamma_t, pr, m_max)
    _, win_s = _counter_post_weights(gamma_t, ps, m_max)
    d_post = np.zeros(m_max + 1)
    h_post = np.zeros(m_max + 1)
    for start in range(0, m_max + 1, chunk):
        sl = slice(start, min(start + chunk, m_max + 1))
        m = np.arange(sl.start, sl.stop)
        points = _node_count(start)
        s, ds = _gamma_mixture_nodes(m, pr.size, points)
        fr = gamma_mixture_densities(win_r[sl], m, s)
        fs = gamma_mixture_densities(win_s[sl], m, s)
        # densities w.r.t. dx are f / x; integrate f(s) ds
        with np.errstate(divide="ignore", invalid="ignore"):
            d_int = np.where(fr > 0, fr * np.log(fr / fs), 0.0)
            h_int = np.where(fr > 0, -fr * (np.log(fr) - s), 0.0)
        wq = np.ones(points)
        wq[[0, -1]] = 0.5
        d_post[sl] = (d_int @ wq) * ds
        h_post[sl] = (h_int @ wq) * ds
    d_post[pm_r <= DENSITY_FLOOR] = 0.0
    h_post[pm_r <= DENSITY_FLOOR] = 0.0
    return pm_r, d_post, h_post


MAX_MI_OUTCOMES = 20_000


def counter_x_analysis(model: CounterModel, rho: np.ndarray, sigma: np.ndarray, shannon: bool = True):
    """Conservation report and (optionally) Shannon balance for the Poisson observable X.

    Returns ``(report, balance)``; ``balance`` is None when not requested.
    The mutual information uses the prior joint p^qc(m|x) p^X(x) on the x grid,
    which stops resolving the Poisson kernel once M_max exceeds
    ``MAX_MI_OUTCOMES``; that case raises ParameterRangeError.
    """
    gt = model.gamma_t
    N = model.spec.truncation
    if shannon and model.m_max > MAX_MI_OUTCOMES:
        raise ParameterRangeError(f"x grid cannot resolve I(X:qc) with {model.m_max} outcomes")
    eff = PovmDensity(model.x_grid, poisson_kernel_effects(model.x_grid.labels, N), diagonal=True)
    px_r = povm_distribution(rho, eff)
    px_s = povm_distribution(sigma, eff)
    pm_r, d_post, h_post = counter_x_post(gt, rho, sigma, model.m_max)
    pm_s, _ = _counter_post_weights(gt, np.clip(np.diag(sigma).real, 0, None), model.m_max)
    y_grid = OutcomeGrid.discrete(model.m_max + 1)
    report = report_from_parts(Distribution(y_grid, pm_r), Distribution(y_grid, pm_s), px_r, px_s, d_post)
    balance = None
    if shannon:
        kernel = counter_x_kernel(np.arange(model.m_max + 1)[None, :], model.x_grid.labels[:, None], gt)
        mi = mutual_information(prior_joint(px_r, kernel, y_grid))
        mask = pm_r > DENSITY_FLOOR
        drop = shannon_entropy(px_r) - float(np.sum(pm_r[mask] * h_post[mask]))
        balance = ShannonBalance(mi, drop, drop - mi)
    return report, balance


def counter_x_report(model: CounterModel, rho: np.ndarray, sigma: np.ndarray) -> ConservationReport:
    """Conservation report for the Poisson-kernel observable X, any gamma*t."""
    return counter_x_analysis(model, rho, sigma, shannon=False)[0]


def counter_x_shannon(model: CounterModel, rho: np.ndarray) -> ShannonBalance:
    """Mutual information I(X:qc), entropy drop and deficit for the Poisson observable."""
    return counter_x_analysis(model, rho, rho, shannon=True)[1]


def counter_number_distance(rho, sigma) -> float:
    pr = np.clip(np.diag(rho).real, 0, None)
    ps = np.clip(np.diag(sigma).real, 0, None)
    return _kl_vec(pr, ps)


def counter_conditional_gap(model: CounterModel, rho, sigma) -> float:
    """int dx p^X_rho(x) D(p^N_rho(.|x) || p^N_sigma(.|x)) on the model's x grid."""
    N = model.spec.truncation
    lik = poisson_kernel_effects(model.x_grid.labels, N)  # (Kx, N+1)
    pr = np.clip(np.diag(rho).real, 0, None)
    ps = np.clip(np.diag(sigma).real, 0, None)
    jr = lik * pr[None, :]
    js = lik * ps[None, :]
    px_r = jr.sum(axis=1)
    px_s = js.sum(axis=1)
    total = 0.0
    for i, w in enumerate(model.x_grid.weights):
        if px_r[i] <= DENSITY_FLOOR:
            continue
        total += w * px_r[i] * _kl_vec(jr[i] / px_r[i], js[i] / px_s[i])
    return float(total)


# -- homodyne ---------------------------------------------------------------

def wiener_density(y, gamma_t: float) -> np.ndarray:
    """Reference density of y(t) under the Wiener measure: N(0, 1 - e^{-gt})."""
    c = -math.expm1(-gamma_t)
    y = np.asarray(y, float)
    return np.exp(-(y**2) / (2 * c)) / math.sqrt(2 * math.pi * c)


def homodyne_lebesgue_kernel(y, x, gamma_t: float) -> np.ndarray:
    """p(y|x) w.r.t. dy: Gaussian, mean sqrt2 (1-e^{-gt}) x, variance e^{-gt}(1-e^{-gt})."""
    c = -math.expm1(-gamma_t)
    var = math.exp(-gamma_t) * c
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    return np.exp(-((y - math.sqrt(2) * c * x) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)


def homodyne_default_grids(gamma_t: float, N: int, points_per_width: int = 8):
    """x grid on [-L, L], y grid covering the outcome support, both resolving every Gaussian width by 8 points."""
    c = -math.expm1(-gamma_t)
    sd_y = math.sqrt(math.exp(-gamma_t) * c)
    L = default_quadrature_half_width(N)
    x_width = min(1 / math.sqrt(2), sd_y / (math.sqrt(2) * c), math.pi / math.sqrt(2 * N + 1))
    x_grid = OutcomeGrid.uniform(-L, L, x_width / points_per_width)
    Ly = math.sqrt(2) * c * L + 8 * sd_y
    y_grid = OutcomeGrid.uniform(-Ly, Ly, min(sd_y, math.sqrt(2) * c / math.sqrt(2)) / points_per_width)
    return x_grid, y_grid


def homodyne_kraus(y, gamma_t: float, spec: HilbertSpec) -> np.ndarray:
    """M_y = e^{-gt n/2} exp[y a - (1 - e^{-gt}) a^2 / 2] (terminating series)."""
    a = annihilation(spec)
    c = -math.expm1(-gamma_t)
    decay = np.exp(-0.5 * gamma_t * np.arange(spec.dim))[:, None]
    return decay * matrix_exponential(y * a - 0.5 * c * (a @ a))


def quadrature_pvm(x_grid: OutcomeGrid, dim: int) -> PovmDensity:
    return PovmDensity.rank_one(x_grid, quadrature_wavefunctions(x_grid.labels, dim), name="X1")


def homodyne_model(gamma: float, t: float, spec: HilbertSpec, x_grid: OutcomeGrid | None = None,
                   y_grid: OutcomeGrid | None = None, guard: int = GUARD_BAND) -> ModelBundle:
    gt = gamma * t
    if gt <= 0:
        raise InvalidModelError("gamma * t must be positive")
    if x_grid is None or y_grid is None:
        dx, dy = homodyne_default_grids(gt, spec.truncation)
        if max(len(dx), len(dy)) > MAX_DEFAULT_GRID:
            raise ParameterRangeError(
                f"default homodyne grids need {max(len(dx), len(dy))} points at gamma*t = {gt}; pass explicit grids"
            )
        x_grid = dx if x_grid is None else x_grid
        y_grid = dy if y_grid is None else y_grid
    mu = y_grid.weights * wiener_density(y_grid.labels, gt)
    y_grid = OutcomeGrid(y_grid.labels, mu, "continuous-1d")
    kraus = np.stack([homodyne_kraus(y, gt, spec) for y in y_grid.labels])[:, None]
    inst = KrausInstrument(y_grid, kraus, name="homodyne")
    povm = quadrature_pvm(x_grid, spec.dim)
    shrink = math.exp(-gt / 2)

    def kernel(x, y):
        y = np.asarray(y, float)[None, :]
        return homodyne_lebesgue_kernel(y, np.asarray(x, float)[:, None], gt) / wiener_density(y, gt)

    def x_tilde(x, y):
        return shrink * np.asarray(x, float)[:, None] + np.asarray(y, float)[None, :] / math.sqrt(2)

    def q(x, y):
        xt = x_tilde(x, y)
        yy = np.asarray(y, float)[None, :] + 0 * xt
        return shrink * homodyne_lebesgue_kernel(yy, xt, gt) / wiener_density(yy, gt)

    def effect_at(x):
        psi = quadrature_wavefunctions(np.ravel(x), spec.dim)
        return np.einsum("xi,xj->xij", psi, psi).astype(complex)

    return ModelBundle(
        "homodyne", inst, povm, AnalyticCertificate(kernel, q, x_tilde, jacobian=shrink, ban=False),
        {"gamma": gamma, "t": t, "N": spec.truncation, "nx": len(x_grid), "ny": len(y_grid)},
        "Balanced homodyne; x~(x;y) = e^{-gt/2} x + y/sqrt2.",
        effect_at=effect_at, guard=guard, state_dim=max(spec.dim - guard, 1), conservation_tol=1e-4,
    )


def homodyne_povm_closed_form(y: float, gamma_t: float, spec: HilbertSpec, nodes: int = 96) -> np.ndarray:
    """M_y^dag M_y = exp[gt/2 + X1^2 - e^{gt} (X1 - y/sqrt2)^2] compressed to the Fock truncation.

    Matrix elements int dx psi_m psi_n f(x) are evaluated exactly: psi_m psi_n e^{x^2}
    is a polynomial times pi^{-1/2}, integrated against the Gaussian
    e^{-e^{gt}(x - y/sqrt2)^2} by Gauss-Hermite quadrature of sufficient order.
    """
    a = math.exp(gamma_t)
    b = y / math.sqrt(2)
    u, w = np.polynomial.hermite.hermgauss(nodes)
    x = b + u / math.sqrt(a)
    # normalized Hermite polynomials h_n with psi_n = pi^{-1/4} e^{-x^2/2} h_n
    h = quadrature_wavefunctions(x, spec.dim) * np.exp(0.5 * x**2)[:, None] * np.pi**0.25
    mat = (h * w[:, None]).T @ h / math.sqrt(a) / math.sqrt(np.pi)
    return (math.exp(gamma_t / 2) * mat).astype(complex)


# -- heterodyne ------------------------------------------------------------

def heterodyne_reference_density(y, gamma_t: float) -> np.ndarray:
    c = -math.expm1(-gamma_t)
    return np.exp(-np.abs(np.asarray(y)) ** 2 / c) / (math.pi * c)


def heterodyne_lebesgue_kernel(y, alpha, gamma_t: float) -> np.ndarray:
    """p(y|alpha) w.r.t. d^2y: complex Gaussian, mean (1-e^{-gt}) alpha*, variance e^{-gt}(1-e^{-gt})."""
    c = -math.expm1(-gamma_t)
    var = math.exp(-gamma_t) * c
    return np.exp(-np.abs(np.asarray(y) - c * np.conj(alpha)) ** 2 / var) / (math.pi * var)


def square_grid(half_width: float = 4.0, points: int = 41) -> OutcomeGrid:
    axis = OutcomeGrid.uniform(-half_width, half_width, 2 * half_width / (points - 1))
    return OutcomeGrid.product(axis, axis)


def heterodyne_kraus(y, gamma_t: float, spec: HilbertSpec) -> np.ndarray:
    """M_y = e^{-gt n/2} e^{y a} (terminating series)."""
    a = annihilation(spec)
    decay = np.exp(-0.5 * gamma_t * np.arange(spec.dim))[:, None]
    return decay * matrix_exponential(y * a)


def coherent_povm(alpha_grid: OutcomeGrid, dim: int) -> PovmDensity:
    """E_alpha = |alpha><alpha| / pi, compressed to the truncation."""
    amps = coherent_amplitudes(alpha_grid.labels, dim) / math.sqrt(math.pi)
    return PovmDensity.rank_one(alpha_grid, amps, name="Q")


def heterodyne_model(gamma: float, t: float, spec: HilbertSpec, alpha_grid: OutcomeGrid | None = None,
                     y_grid: OutcomeGrid | None = None, guard: int = GUARD_BAND) -> ModelBundle:
    gt = gamma * t
    if gt <= 0:
        raise InvalidModelError("gamma * t must be positive")
    alpha_grid = square_grid() if alpha_grid is None else alpha_grid
    y_grid = alpha_grid if y_grid is None else y_grid
    mu = y_grid.weights * heterodyne_reference_density(y_grid.labels, gt)
    y_grid = OutcomeGrid(y_grid.labels, mu, "continuous-2d")
    kraus = np.stack([heterodyne_kraus(y, gt, spec) for y in y_grid.labels])[:, None]
    inst = KrausInstrument(y_grid, kraus, name="heterodyne")
    povm = coherent_povm(alpha_grid, spec.dim)
    shrink = math.exp(-gt / 2)

    def kernel(x, y):
        y = np.asarray(y)[None, :]
        return heterodyne_lebesgue_kernel(y, np.asarray(x)[:, None], gt) / heterodyne_reference_density(y, gt)

    def x_tilde(x, y):
        return shrink * np.asarray(x)[:, None] + np.conj(np.asarray(y))[None, :]

    def q(x, y):
        xt = x_tilde(x, y)
        yy = np.asarray(y)[None, :] + 0 * xt
        return math.exp(-gt) * heterodyne_lebesgue_kernel(yy, xt, gt) / heterodyne_reference_density(yy, gt)

    def effect_at(alpha):
        v = coherent_amplitudes(np.ravel(alpha), spec.dim)
        return np.einsum("ai,aj->aij", v, v.conj()) / np.pi

    return ModelBundle(
        "heterodyne", inst, povm, AnalyticCertificate(kernel, q, x_tilde, jacobian=math.exp(-gt), ban=False),
        {"gamma": gamma, "t": t, "N": spec.truncation, "n_alpha": len(alpha_grid), "n_y": len(y_grid)},
        "Heterodyne; X is the coherent-state POVM (Q function); x~ = e^{-gt/2} alpha + y*.",
        effect_at=effect_at, guard=guard, pvm=False, state_dim=max(spec.dim - guard, 1), conservation_tol=1e-3,
    )


def q_function(rho: np.ndarray, alpha_grid: OutcomeGrid) -> Distribution:
    """Q_rho(alpha) = <alpha|rho|alpha> / pi on the grid."""
    return povm_distribution(rho, coherent_povm(alpha_grid, rho.shape[0]))


def q_relative_entropy(rho: np.ndarray, sigma: np.ndarray, alpha_grid: OutcomeGrid | None = None) -> float:
    alpha_grid = square_grid() if alpha_grid is None else alpha_grid
    return relative_entropy(q_function(rho, alpha_grid), q_function(sigma, alpha_grid))
