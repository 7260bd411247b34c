"""Certification of the classicality conditions for a (Y instrument, X POVM) pair.

The certificate holds the coarse-graining kernel p(y|x), the proportionality
scalar q(x;y) and the sufficient statistic x~(x;y) with operator-level
residuals.  Tables are indexed ``[x, y]``; ``x`` runs over the X labels of the
relevant side (input for p(y|x), instrument output for q and x~) and ``y``
over the (possibly subsampled) instrument labels kept in the certificate.
The unassigned statistic is NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import nnls
from scipy.stats import unitary_group

from .entropy import conservation_report, relative_entropy
from .errors import AmbiguousMatchError, ConsistencyError
from .hilbert import random_density_matrix
from .measurement import (
    KrausInstrument,
    OutcomeGrid,
    PovmDensity,
    povm_distribution,
)

CERT_TOL = 1e-8
Q_FLOOR = 1e-12
MATCH_TOL = 1e-6
PAIR_SCALE_FLOOR = 1e-6
NULL = np.nan


@dataclass
class ClassicalityCertificate:
    x_in_grid: OutcomeGrid
    x_out_grid: OutcomeGrid
    y_labels: np.ndarray
    y_weights: np.ndarray
    q: np.ndarray
    x_tilde: np.ndarray
    residual_sufficient: float
    pair_residuals: np.ndarray
    p_y_given_x: np.ndarray | None = None
    residual_coarse: float = float("nan")
    residual_pushforward: float = float("nan")
    ban_satisfied: bool | None = None
    ban_deviation: float = float("nan")
    mode: str = "discrete"
    tolerances: dict = field(default_factory=dict)

    @property
    def cert_tol(self) -> float:
        return self.tolerances.get("cert_tol", CERT_TOL)

    @property
    def sufficient_ok(self) -> bool:
        return bool(self.residual_sufficient < self.cert_tol)

    @property
    def coarse_ok(self) -> bool:
        return bool(self.residual_coarse < self.cert_tol)

    @property
    def null_mask(self) -> np.ndarray:
        return np.isnan(self.x_tilde.real) if np.iscomplexobj(self.x_tilde) else np.isnan(self.x_tilde)

    def normalization_defect(self) -> float:
        """max_x |sum_y mu0 p(y|x) - 1|; meaningful only when every y is kept."""
        if self.p_y_given_x is None:
            return float("nan")
        return float(np.max(np.abs(self.p_y_given_x @ self.y_weights - 1.0)))


# -- helpers -----------------------------------------------------------------

def _hs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """<a, b> = tr(a^dag b) over trailing matrix axes, broadcasting leading ones."""
    return np.sum(np.conj(a) * b, axis=(-2, -1))


def _fro(a: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.abs(a) ** 2, axis=(-2, -1)))


def _heisenberg_block(inst: KrausInstrument, j: int, readout: PovmDensity) -> np.ndarray:
    """E_y^dag(E_x) for one outcome y and every readout label x, shape (Kx, d_in, d_in)."""
    m = inst.kraus[j]  # (Z, d_out, d_in)
    if readout.diagonal:
        return np.einsum("zki,xk,zkj->xij", m.conj(), readout.effects, m, optimize=True)
    if readout.vectors is not None:
        v = np.einsum("zki,xk->xzi", m.conj(), readout.vectors)  # M^dag v
        return np.einsum("xzi,xzj->xij", v, v.conj())
    return np.einsum("zki,xkl,zlj->xij", m.conj(), readout.effects, m, optimize=True)


def is_pvm(povm: PovmDensity, tol: float = 1e-10) -> bool:
    """Discrete family of mutually orthogonal projectors."""
    if povm.grid.kind != "discrete":
        return False
    if povm.diagonal:
        e = povm.effects
        return bool(np.all(np.abs(e * e - e) < tol) and np.all(np.abs(e.sum(axis=0) - 1) < tol))
    e = povm.effects
    prod = np.einsum("aij,bjk->abik", e, e)
    want = np.zeros_like(prod)
    idx = np.arange(len(e))
    want[idx, idx] = e
    return bool(np.max(np.abs(prod - want)) < tol)


def _y_subset(n: int, max_y: int | None) -> np.ndarray:
    if max_y is None or n <= max_y:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_y).round().astype(int))


# -- sufficient statistic ------------------------------------------------------

def extract_sufficient_statistic(
    inst: KrausInstrument,
    povmX: PovmDensity,
    povmX_out: PovmDensity | None = None,
    *,
    x_tilde: Callable | None = None,
    effect_at: Callable | None = None,
    y_index=None,
    cert_tol: float = CERT_TOL,
    q_floor: float = Q_FLOOR,
    match_tol: float = MATCH_TOL,
) -> ClassicalityCertificate:
    """Fit E_y^dag(E_x) = q(x;y) E_{x~(x;y)} for every readout label x and kept outcome y.

    Discrete mode searches the X effects for the best normalized
    Hilbert-Schmidt overlap.  Passing an analytic ``x_tilde(x_labels, y_labels)``
    together with ``effect_at`` switches to continuous mode: effects are
    evaluated at the mapped (generally off-grid) labels and only q is fitted.
    ``y_index`` restricts the outcomes examined (default: all).
    """
    readout = povmX if povmX_out is None else povmX_out
    y_index = np.arange(len(inst.grid)) if y_index is None else np.asarray(y_index)
    x_labels = readout.grid.labels
    kx, ky = len(readout.grid), len(y_index)
    continuous = x_tilde is not None
    if continuous and effect_at is None:
        raise ValueError("continuous mode needs effect_at to evaluate effects off the grid")
    tilde_dtype = complex if np.iscomplexobj(x_labels) or np.iscomplexobj(povmX.grid.labels) else float
    q = np.zeros((kx, ky))
    xt = np.full((kx, ky), NULL, dtype=tilde_dtype)
    res = np.zeros((kx, ky))
    if continuous:
        xt_all = np.asarray(x_tilde(x_labels, inst.grid.labels[y_index]), dtype=tilde_dtype)
    else:
        cand = povmX.dense_effects()
        cand_norm = _fro(cand)
    for col, j in enumerate(y_index):
        a = _heisenberg_block(inst, j, readout)  # (Kx, d, d)
        a_norm = _fro(a)
        live = a_norm > q_floor
        # pairs far below the outcome's dominant effect are judged on its scale
        floor = max(q_floor, PAIR_SCALE_FLOOR * float(a_norm.max(initial=0.0)))
        if continuous:
            e = effect_at(xt_all[:, col])
            qv = (_hs(e, a) / _hs(e, e)).real
            r = _fro(a - qv[:, None, None] * e) / np.maximum(a_norm, floor)
            xt[:, col] = xt_all[:, col]
        else:
            ov = np.abs(np.einsum("kij,xij->xk", cand.conj(), a, optimize=True))
            ov = ov / (cand_norm[None, :] * np.maximum(a_norm, q_floor)[:, None])
            best = np.argmax(ov, axis=1)
            e = cand[best]
            qv = (_hs(e, a) / _hs(e, e)).real
            r = _fro(a - qv[:, None, None] * e) / np.maximum(a_norm, floor)
            for i in np.flatnonzero(live & (r < cert_tol)):
                close = np.flatnonzero(ov[i] >= ov[i, best[i]] - match_tol)
                if close.size > 1:
                    raise AmbiguousMatchError(
                        f"x~({x_labels[i]!r};{inst.grid.labels[j]!r}) is ambiguous",
                        [povmX.grid.labels[c].item() for c in close],
                    )
            xt[:, col] = povmX.grid.labels[best]
        qv = np.where(live, np.maximum(qv, 0.0), 0.0)
        null = qv <= q_floor
        xt[null, col] = NULL
        q[:, col] = np.where(null, 0.0, qv)
        res[:, col] = np.where(live, r, 0.0)
    return ClassicalityCertificate(
        x_in_grid=povmX.grid,
        x_out_grid=readout.grid,
        y_labels=inst.grid.labels[y_index],
        y_weights=inst.grid.weights[y_index],
        q=q,
        x_tilde=xt,
        residual_sufficient=float(res.max(initial=0.0)),
        pair_residuals=res,
        mode="continuous" if continuous else "discrete",
        tolerances={"cert_tol": cert_tol, "q_floor": q_floor, "match_tol": match_tol},
    )


def _tilde_index(cert: ClassicalityCertificate, atol: float = 1e-9) -> np.ndarray:
    """Input-grid index of each x~ entry (-1 for the null statistic or an off-grid value)."""
    labels = cert.x_in_grid.labels
    out = np.full(cert.x_tilde.shape, -1, dtype=int)
    live = ~cert.null_mask
    vals = cert.x_tilde[live]
    match = np.isclose(vals[:, None], labels[None, :], rtol=0, atol=atol)
    out[live] = np.where(match.any(axis=1), match.argmax(axis=1), -1)
    return out


# -- coarse graining -----------------------------------------------------------

def extract_coarse_graining(
    inst: KrausInstrument,
    povmX: PovmDensity,
    *,
    cert: ClassicalityCertificate | None = None,
    kernel_hint: np.ndarray | None = None,
    y_index=None,
    guard: int = 0,
) -> tuple[np.ndarray, float, str]:
    """Kernel p(y|x) (shape (Kx, Ky_kept)) with E^Y_y = sum_x nu0 p(y|x) E_x, its residual, and the method used.

    Methods in order of preference: the sufficient-statistic formula
    p(y|x) = sum_x' delta(x, x~(x';y)) q(x';y) when a certificate for a PVM is
    given; a supplied ``kernel_hint`` (verified only); the trace formula for a
    discrete PVM; otherwise nonnegative least squares per outcome.  The
    residual is sum_y mu0(y) ||E^Y_y - sum_x nu0 p(y|x) E_x|| over the kept
    outcomes (spectral norm on the first d - guard basis states): with every
    outcome kept it bounds the L1 error of the reconstructed p^Y for any state
    on that subspace.
    """
    y_index = np.arange(len(inst.grid)) if y_index is None else np.asarray(y_index)
    ey = inst.effects()[y_index]
    ex = povmX.dense_effects()
    wx = povmX.grid.weights
    pvm = is_pvm(povmX)
    if cert is not None and pvm and cert.mode == "discrete":
        idx = _tilde_index(cert)
        kernel = np.zeros((len(povmX.grid), len(y_index)))
        for (i, j), k in np.ndenumerate(idx):
            if k >= 0:
                kernel[k, j] += cert.q[i, j]
        method = "sufficient-statistic"
    elif kernel_hint is not None:
        kernel = np.asarray(kernel_hint, dtype=float)
        method = "hint"
    elif pvm:
        num = np.einsum("xij,yji->xy", ex, ey).real
        kernel = num / np.trace(ex, axis1=1, axis2=2).real[:, None]
        method = "pvm-trace"
    else:
        basis = (ex * wx[:, None, None]).reshape(len(wx), -1).T
        a = np.vstack([basis.real, basis.imag])
        kernel = np.zeros((len(wx), len(y_index)))
        for j in range(len(y_index)):
            b = ey[j].reshape(-1)
            kernel[:, j] = nnls(a, np.concatenate([b.real, b.imag]))[0]
        method = "nnls"
    rebuilt = np.einsum("x,xy,xij->yij", wx, kernel, ex, optimize=True)
    keep = max(ey.shape[-1] - guard, 1)
    diff = (ey - rebuilt)[:, :keep, :keep]
    residual = float(inst.grid.weights[y_index] @ np.linalg.norm(diff, 2, axis=(1, 2)))
    return kernel, residual, method


def certify(
    inst: KrausInstrument,
    povmX: PovmDensity,
    povmX_out: PovmDensity | None = None,
    *,
    x_tilde=None,
    effect_at=None,
    kernel=None,
    y_index=None,
    guard: int = 0,
    cert_tol: float = CERT_TOL,
) -> ClassicalityCertificate:
    """Sufficient statistic, coarse graining, push-forward and Ban checks in one pass.

    ``kernel`` is a callable ``kernel(x_labels, y_labels)`` giving p(y|x); it is
    required in continuous mode (both for the coarse-graining hint and for
    evaluating p(y|x~) off the grid).
    """
    cert = extract_sufficient_statistic(
        inst, povmX, povmX_out, x_tilde=x_tilde, effect_at=effect_at, y_index=y_index, cert_tol=cert_tol
    )
    y_idx = np.arange(len(inst.grid)) if y_index is None else np.asarray(y_index)
    if cert.mode == "discrete" and is_pvm(povmX):
        cert.p_y_given_x, cert.residual_coarse, _ = extract_coarse_graining(
            inst, povmX, cert=cert, y_index=y_idx, guard=guard
        )
    else:
        # the coarse-graining residual always covers every outcome
        hint = None if kernel is None else kernel(povmX.grid.labels, inst.grid.labels)
        full, cert.residual_coarse, _ = extract_coarse_graining(inst, povmX, kernel_hint=hint, guard=guard)
        cert.p_y_given_x = full[:, y_idx]
    cert.tolerances["coarse_guard"] = guard
    cert.residual_pushforward = check_pushforward(cert)
    ok, dev = check_ban_condition(cert, kernel)
    cert.ban_satisfied, cert.ban_deviation = ok, dev
    return cert


# -- push-forward (distribution of x~) -------------------------------------------

def probe_functions(labels: np.ndarray) -> list[tuple[str, Callable]]:
    """Finite probe family standing in for "any smooth F".

    Real labels: x^0..x^4 and Gaussians at five centres across the label range.
    Complex labels: monomials Re^a Im^b with a + b <= 3.
    """
    if np.iscomplexobj(labels):
        probes = []
        for a in range(4):
            for b in range(4 - a):
                probes.append((f"re^{a} im^{b}", lambda z, a=a, b=b: np.real(z) ** a * np.imag(z) ** b))
        return probes
    lo, hi = float(np.min(labels)), float(np.max(labels))
    span = max(hi - lo, 1.0)
    probes = [(f"x^{k}", lambda x, k=k: np.asarray(x, float) ** k) for k in range(5)]
    for c in np.linspace(lo + 0.1 * span, hi - 0.1 * span, 5):
        probes.append((f"gauss@{c:.3g}", lambda x, c=c: np.exp(-((np.asarray(x, float) - c) ** 2) / (2 * (0.1 * span) ** 2))))
    return probes


def _boundary_mask(labels: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(labels):
        re, im = labels.real, labels.imag
        return (re == re.min()) | (re == re.max()) | (im == im.min()) | (im == im.max())
    return (labels == labels.min()) | (labels == labels.max())


def check_pushforward(cert: ClassicalityCertificate, interior_tol: float = 1e-10) -> float:
    """max deviation of sum nu0 q F(x~) from sum nu0 p(y|x) F(x) over probes and kept y.

    Deviations are scaled by sup|F| * sum nu0 p(y|x), the natural bound on either side.

    A discrete PVM satisfies the identity automatically (the kernel is built
    from q and x~), so 0 is returned.  On continuous grids an outcome is
    skipped when either integrand carries weight on the grid boundary, since
    the two sums then cover different parts of the line.
    """
    if cert.p_y_given_x is None:
        return float("nan")
    if cert.mode == "discrete" and cert.x_in_grid.kind == "discrete":
        return 0.0
    w_out, w_in = cert.x_out_grid.weights, cert.x_in_grid.weights
    x_in = cert.x_in_grid.labels
    edge_out, edge_in = _boundary_mask(cert.x_out_grid.labels), _boundary_mask(x_in)
    probes = probe_functions(x_in)
    worst = 0.0
    for j in range(len(cert.y_labels)):
        qj, pj = cert.q[:, j], cert.p_y_given_x[:, j]
        live = ~np.isnan(cert.x_tilde[:, j].real)
        lhs_mass = w_out * qj
        rhs_mass = w_in * pj
        if rhs_mass.sum() <= 0:
            continue
        if np.max(lhs_mass[edge_out], initial=0) > interior_tol * lhs_mass.max() or \
                np.max(rhs_mass[edge_in], initial=0) > interior_tol * rhs_mass.max():
            continue
        xt = np.where(live, cert.x_tilde[:, j], 0)
        for _, f in probes:
            lhs = np.sum(lhs_mass[live] * f(xt[live]))
            fx = f(x_in)
            rhs = np.sum(rhs_mass * fx)
            scale = max(np.max(np.abs(fx)) * np.sum(rhs_mass), Q_FLOOR)
            worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


def sufficient_statistic_identity(joint_density: np.ndarray, x_out_grid: OutcomeGrid, y_weights: np.ndarray,
                                  x_tilde_table: np.ndarray, px, probes=None) -> float:
    """Check that x~ pushed through p~(x, y) is distributed like X on the pre-measurement state.

    Compares sum_{x,y} nu0 mu0 p~(x,y) F(x~(x;y)) with sum_x nu0 p^X(x) F(x)
    over the probe family; returns the max relative deviation.
    """
    probes = probe_functions(px.grid.labels) if probes is None else probes
    mass = joint_density * np.outer(x_out_grid.weights, y_weights)
    live = ~np.isnan(x_tilde_table.real)
    xt = np.where(live, x_tilde_table, 0)
    worst = 0.0
    for _, f in probes:
        lhs = np.sum(mass[live] * f(xt[live]))
        fx = f(px.grid.labels)
        rhs = np.sum(px.probabilities() * fx)
        scale = max(np.max(np.abs(fx)) * px.mass, Q_FLOOR)
        worst = max(worst, abs(lhs - rhs) / scale)
    return float(worst)


# -- Ban's condition and the Jacobian ----------------------------------------

def check_ban_condition(cert: ClassicalityCertificate, kernel: Callable | None = None) -> tuple[bool, float]:
    """Whether q(x;y) = p(y|x~(x;y)) wherever q > q_floor.

    Deviations are |q - p| / max(1, |q|, |p|): the plain difference for
    probabilities, a relative one for large continuous densities.  p(y|x~) is
    looked up in the certificate's kernel table (discrete) or evaluated with
    ``kernel`` at the off-grid x~ (continuous).
    """
    live = ~cert.null_mask
    if not np.any(live):
        return True, 0.0
    if cert.mode == "discrete":
        if cert.p_y_given_x is None:
            raise ValueError("certificate has no kernel table")
        idx = _tilde_index(cert)
        cols = np.broadcast_to(np.arange(len(cert.y_labels))[None, :], idx.shape)
        p_at = np.where(idx >= 0, cert.p_y_given_x[np.maximum(idx, 0), cols], 0.0)
    else:
        if kernel is None:
            raise ValueError("continuous certificates need a kernel callable")
        p_at = np.zeros(cert.q.shape)
        for j, y in enumerate(cert.y_labels):
            xt = cert.x_tilde[live[:, j], j]
            if xt.size:
                p_at[live[:, j], j] = kernel(xt, np.array([y]))[:, 0]
    dev = np.abs(cert.q - p_at) / np.maximum(1.0, np.maximum(np.abs(cert.q), np.abs(p_at)))
    worst = float(dev[live].max())
    return worst < cert.cert_tol, worst


def tilde_jacobian(x_tilde: Callable, x_labels: np.ndarray, y_labels: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """|d x~ / d x| by central differences; for complex labels the real 2x2 determinant."""
    x = np.asarray(x_labels)
    y = np.asarray(y_labels)
    if np.iscomplexobj(x):
        dre = (x_tilde(x + h, y) - x_tilde(x - h, y)) / (2 * h)
        dim = (x_tilde(x + 1j * h, y) - x_tilde(x - 1j * h, y)) / (2 * h)
        return np.abs(dre.real * dim.imag - dre.imag * dim.real)
    return np.abs((x_tilde(x + h, y) - x_tilde(x - h, y)) / (2 * h))


def jacobian_consistent(ban: bool, jac: np.ndarray, tol: float = 1e-6) -> bool:
    """Ban's condition on a continuous PVM forces |dx~/dx| = 1; a non-unit Jacobian forbids it."""
    unit = bool(np.all(np.abs(jac - 1.0) < tol))
    return unit if ban else True


# -- equivalent forms of Ban's condition ------------------------------------

@dataclass
class EquivalentConditionsReport:
    ban: bool
    unique_count: bool
    unique_preimage: bool
    eigen_to_eigen: bool

    @property
    def values(self) -> tuple[bool, bool, bool, bool]:
        return (self.ban, self.unique_count, self.unique_preimage, self.eigen_to_eigen)

    @property
    def unanimous(self) -> bool:
        return len(set(self.values)) == 1


def check_equivalent_conditions(inst: KrausInstrument, pvmX: PovmDensity, tol: float = CERT_TOL) -> EquivalentConditionsReport:
    """Evaluate the four equivalent conditions for a discrete PVM X and discrete Y.

    Requires the sufficient-statistic condition to hold (it is the
    standing assumption).  Raises ConsistencyError if the four verdicts differ.
    """
    if not is_pvm(pvmX):
        raise ValueError("the conditions are stated for a discrete PVM")
    cert = certify(inst, pvmX, cert_tol=tol)
    if not cert.sufficient_ok:
        raise ValueError(f"sufficient-statistic condition fails (residual {cert.residual_sufficient:.2e})")
    ban = bool(cert.ban_satisfied)
    idx = _tilde_index(cert)
    kx, ky = cert.p_y_given_x.shape
    counts = np.zeros((kx, ky), dtype=int)
    for (i, j), k in np.ndenumerate(idx):
        if k >= 0:
            counts[k, j] += 1
    support = cert.p_y_given_x > tol
    cond2 = bool(np.all(counts[support] == 1))
    # condition 3: a preimage exists and no second one does
    cond3 = all(
        np.count_nonzero(idx[:, j] == x) == 1 for x, j in zip(*np.nonzero(support))
    )
    # condition 4: E_y(|x><x|) is proportional to a basis projector for every x, y
    cond4 = True
    for x in range(kx):
        for op in inst.apply(pvmX.dense(x)):
            total = float(np.trace(op).real)
            if total <= tol:
                continue
            k = int(np.argmax(np.diag(op).real))
            target = np.zeros_like(op)
            target[k, k] = total
            if np.linalg.norm(op - target) > tol * max(total, 1.0):
                cond4 = False
    report = EquivalentConditionsReport(ban, cond2, cond3, cond4)
    if not report.unanimous:
        raise ConsistencyError(f"equivalent conditions disagree: {report.values}")
    return report


def random_monomial_instrument(dim: int, n_y: int, rng: np.random.Generator, n_z: int = 1,
                               injective: bool | None = None) -> KrausInstrument:
    """Random instrument M_yz = sum_x a_z(x;y) |x><x~_y(x)| on a dim-level system.

    Each outcome uses one index map x -> x~_y(x) (a permutation when
    ``injective``, an arbitrary map otherwise; None draws either), so the
    sufficient-statistic condition holds by construction.  Amplitudes are
    rescaled so sum_{y,z} sum_{x: x~_y(x)=t} |a|^2 = 1 for every t.
    """
    while True:
        maps = []
        for _ in range(n_y):
            inj = rng.random() < 0.5 if injective is None else injective
            maps.append(rng.permutation(dim) if inj else rng.integers(0, dim, size=dim))
        maps = np.array(maps)
        if np.all(np.bincount(maps.ravel(), minlength=dim) > 0):
            break
    amp = (rng.normal(size=(n_y, n_z, dim)) + 1j * rng.normal(size=(n_y, n_z, dim)))
    mass = np.zeros(dim)
    for y in range(n_y):
        np.add.at(mass, maps[y], np.sum(np.abs(amp[y]) ** 2, axis=0))
    kraus = np.zeros((n_y, n_z, dim, dim), dtype=complex)
    x = np.arange(dim)
    for y in range(n_y):
        kraus[y][:, x, maps[y]] = amp[y] / np.sqrt(mass[maps[y]])[None, :]
    return KrausInstrument(OutcomeGrid.discrete(n_y), kraus, name="monomial")


# -- conservation falsifier ---------------------------------------------------

@dataclass
class FalsifierVerdict:
    condition_holds: bool
    residual_sufficient: float
    max_residual: float
    n_samples: int
    n_violations: int
    counterexample_flag: bool
    consistent: bool
    twirl_residual: float
    worst_pair: tuple | None = None

    def as_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "worst_pair"}


def twirl_residual(inst: KrausInstrument, pvmX: PovmDensity, rng: np.random.Generator, k: int = 3,
                    povmX_out: PovmDensity | None = None) -> float:
    """max ||E_z - sum_x U_x^dag E_z U_x|| / ||E_z|| over E_z = E_y^dag(E_x) and k random block unitaries.

    U_x is a Haar unitary on the range of E_x embedded as V U V^dag; E_z must
    be invariant for every choice when the sufficient-statistic condition holds.
    """
    ex = pvmX.dense_effects()
    blocks = []
    for e in ex:
        w, v = np.linalg.eigh(e)
        blocks.append(v[:, w > 0.5])
    worst = 0.0
    readout = pvmX if povmX_out is None else povmX_out
    ez = np.concatenate([_heisenberg_block(inst, j, readout) for j in range(len(inst.grid))])
    norms = np.maximum(_fro(ez), Q_FLOOR)
    for _ in range(k):
        us = []
        for v in blocks:
            r = v.shape[1]
            u = unitary_group.rvs(r, random_state=rng) if r > 1 else np.exp(2j * np.pi * rng.random()) * np.eye(1)
            us.append(v @ u @ v.conj().T)
        twirl = sum(u.conj().T @ ez @ u for u in us)
        worst = max(worst, float(np.max(_fro(ez - twirl) / norms)))
    return worst


def conservation_falsifier(
    inst: KrausInstrument,
    pvmX: PovmDensity,
    n_samples: int = 200,
    rng_seed: int = 0,
    residual_tol: float = CERT_TOL,
    min_distance: float = 1e-6,
    state_dim: int | None = None,
    povmX_out: PovmDensity | None = None,
) -> FalsifierVerdict:
    """Sample Hilbert-Schmidt state pairs and test condition <=> conservation.

    Pairs with D(p^X_rho || p^X_sigma) < ``min_distance`` are redrawn.  When
    the condition holds every residual must stay below ``residual_tol``
    (``consistent`` records this); when it fails and still no sampled residual
    exceeds the tolerance, ``counterexample_flag`` is raised.
    """
    rng = np.random.default_rng(rng_seed)
    try:
        cert = extract_sufficient_statistic(inst, pvmX, povmX_out)
        res_suff = cert.residual_sufficient
    except AmbiguousMatchError:
        res_suff = float("inf")
    holds = res_suff < CERT_TOL
    d = inst.dim_in
    k = state_dim or d
    residuals = []
    worst_pair = None
    for _ in range(n_samples):
        for _attempt in range(100):
            pair = []
            for _ in range(2):
                rho = np.zeros((d, d), dtype=complex)
                rho[:k, :k] = random_density_matrix(k, rng)
                pair.append(rho)
            if relative_entropy(povm_distribution(pair[0], pvmX), povm_distribution(pair[1], pvmX)) >= min_distance:
                break
        rep = conservation_report(pair[0], pair[1], inst, pvmX, povmX_out)
        residuals.append(abs(rep.residual))
        if abs(rep.residual) >= max(residuals):
            worst_pair = tuple(pair)
    residuals = np.array(residuals)
    worst = float(residuals.max(initial=0.0))
    n_bad = int(np.count_nonzero(residuals > residual_tol))
    l2 = twirl_residual(inst, pvmX, rng, povmX_out=povmX_out) if is_pvm(pvmX) else float("nan")
    return FalsifierVerdict(
        condition_holds=bool(holds),
        residual_sufficient=float(res_suff),
        max_residual=worst,
        n_samples=n_samples,
        n_violations=n_bad,
        counterexample_flag=bool(not holds and n_bad == 0),
        consistent=bool(n_bad == 0) if holds else True,
        twirl_residual=l2,
        worst_pair=worst_pair,
    )


def hadamard_instrument() -> KrausInstrument:
    """Single-outcome unitary instrument M = H on a qubit."""
    h = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
    return KrausInstrument(OutcomeGrid.discrete(1), h[None, None])


# -- classical three-variable model ------------------------------------------

def build_classical_model(cert: ClassicalityCertificate, p_x) -> np.ndarray:
    """p~(x_in, y, x_out) = delta(x_in, x~(x_out;y)) q(x_out;y) p^X(x_in), shape (K_in, K_y, K_out).

    Needs every x~ to be an input-grid label (discrete certificates).
    """
    idx = _tilde_index(cert)
    if np.any(idx[~cert.null_mask] < 0):
        raise ValueError("x~ takes values off the input grid")
    k_in = len(cert.x_in_grid)
    k_out, k_y = cert.q.shape
    joint = np.zeros((k_in, k_y, k_out))
    px = p_x.density
    for (i, j), k in np.ndenumerate(idx):
        if k >= 0:
            joint[k, j, i] = cert.q[i, j] * px[k]
    return joint
