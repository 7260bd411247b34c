"""Model construction and per-point evaluation behind the CLI.

An :class:`Evaluator` wraps one model at one parameter point.  It produces a
classicality certificate once and a conservation report plus Shannon
balance for each state pair.  Everything here is deterministic: states are
built from explicit seeds and reductions run in a fixed order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import config as cfgmod
from .classicality import CERT_TOL, certify
from .entropy import ConservationReport, ShannonBalance, conservation_report, shannon_balance
from .errors import ParameterRangeError
from .hilbert import (
    HilbertSpec,
    coherent_amplitudes,
    projector,
    random_density_matrix,
    random_diagonal_state,
)
from .measurement import OutcomeGrid
from .models import (
    ModelBundle,
    counter_number_report,
    counter_number_shannon,
    counter_x_analysis,
    default_counter_x_grid,
    heterodyne_model,
    homodyne_default_grids,
    homodyne_model,
    photon_counting_model,
    qnd_model,
    quantum_counter_model,
    square_grid,
    symmetric_kernel,
    two_level_model,
)
from .serialize import cert_to_dict, unavailable_cert

# default pass thresholds: (conservation, certificate, shannon)
DEFAULT_TOLS = {
    "qnd": (1e-9, CERT_TOL, 1e-9),
    "two_level": (1e-10, CERT_TOL, 1e-10),
    "photon_counting": (1e-9, CERT_TOL, 1e-9),
    "quantum_counter_number": (1e-6, CERT_TOL, 1e-6),
    "quantum_counter_x": (1e-6, CERT_TOL, 2e-2),
    "homodyne": (1e-4, CERT_TOL, 2e-2),
    "heterodyne": (1e-3, CERT_TOL, 5e-2),
}

# certificate tables are embedded in reports only below this many entries
CERT_TABLE_LIMIT = 4096


def resolve_gamma_t(params: dict) -> tuple[float, float]:
    """(gamma, t) with ``gamma_t`` taking precedence over ``t``."""
    gamma = float(params.get("gamma", 1.0))
    if "gamma_t" in params:
        return gamma, float(params["gamma_t"]) / gamma
    return gamma, float(params.get("t", 1.0))


def _phi(spec) -> np.ndarray:
    if isinstance(spec, str):
        if spec == "maximally_mixed":
            return np.eye(2) / 2
        if spec == "plus":
            return np.full((2, 2), 0.5)
        raise cfgmod.ConfigError(f"phi preset {spec!r} needs an outcome index")
    return np.asarray(spec, dtype=float)


def _two_level_phis(params: dict):
    out = []
    for y, key in enumerate(("phi_0", "phi_1")):
        v = params[key]
        out.append(np.diag([1.0 - y, float(y)]) if v == "eigen" else _phi(v))
    return out


def _evenly(n: int, k: int) -> np.ndarray:
    return np.unique(np.linspace(0, n - 1, min(k, n)).round().astype(int))


# -- states ------------------------------------------------------------------

def build_state(s: cfgmod.StateSpec, dim: int, state_dim: int) -> np.ndarray:
    """Density matrix on the first ``state_dim`` levels, embedded in ``dim``."""
    k = state_dim
    f = s.fields
    if s.kind == "number":
        if f["n"] >= k:
            raise cfgmod.ConfigError(f"state {s.name!r}: n = {f['n']} outside the {k}-level state space")
        small = np.zeros((k, k), dtype=complex)
        small[f["n"], f["n"]] = 1.0
    elif s.kind == "coherent":
        ket = coherent_amplitudes(f["alpha"], k)
        small = projector(ket / np.linalg.norm(ket))
    elif s.kind == "thermal":
        nbar = float(f["nbar"])
        p = (nbar / (1 + nbar)) ** np.arange(k) if nbar > 0 else np.eye(1, k)[0]
        small = np.diag(p / p.sum()).astype(complex)
    elif s.kind == "mixed":
        pops = np.asarray(f.get("populations", np.ones(k)), float)
        if pops.size > k:
            raise cfgmod.ConfigError(f"state {s.name!r}: {pops.size} populations for a {k}-level state space")
        p = np.zeros(k)
        p[: pops.size] = pops
        small = np.diag(p / p.sum()).astype(complex)
    elif s.kind == "random":
        rng = np.random.default_rng(f["seed"])
        if f.get("diagonal", False):
            small = random_diagonal_state(k, rng)
        else:
            small = random_density_matrix(k, rng, f.get("rank"))
    else:  # pragma: no cover - rejected by config parsing
        raise cfgmod.ConfigError(f"unknown state kind {s.kind!r}")
    rho = np.zeros((dim, dim), dtype=complex)
    rho[:k, :k] = small
    return rho


# -- evaluators ------------------------------------------------------------------

@dataclass
class PairResult:
    state_pair: str
    report: ConservationReport
    balance: ShannonBalance | None
    shannon_note: str = ""


@dataclass
class Certificate:
    document: dict
    ban: bool | None
    residual: float  # sufficient-statistic residual; NaN when unavailable


class Evaluator:
    name: str
    dim: int
    state_dim: int
    discrete: bool
    notes: str = ""

    def certificate(self, cert_tol: float) -> Certificate:
        raise NotImplementedError

    def pair(self, rho: np.ndarray, sigma: np.ndarray) -> tuple[ConservationReport, ShannonBalance | None, str]:
        raise NotImplementedError


class BundleEvaluator(Evaluator):
    """Any model with an operator-level instrument."""

    def __init__(self, bundle: ModelBundle, cert_outcomes: int | None = None):
        self.bundle = bundle
        self.name = bundle.name
        self.dim = bundle.inst.dim_in
        self.state_dim = bundle.state_dim or self.dim
        self.discrete = bundle.discrete
        self.notes = bundle.notes
        self.cert_outcomes = cert_outcomes
        self._kernel = None
        if not bundle.pvm or not self.discrete:
            self._kernel = bundle.analytic.kernel(bundle.povmX.grid.labels, bundle.inst.grid.labels)

    def certificate(self, cert_tol: float) -> Certificate:
        b = self.bundle
        kw = {"cert_tol": cert_tol, "guard": b.guard}
        if not self.discrete or not b.pvm:
            kw.update(x_tilde=b.analytic.x_tilde, effect_at=b.effect_at, kernel=b.analytic.kernel)
            if self.cert_outcomes is not None:
                kw["y_index"] = _evenly(len(b.inst.grid), self.cert_outcomes)
        cert = certify(b.inst, b.povmX, b.povmX_out, **kw)
        small = cert.q.size <= CERT_TABLE_LIMIT
        doc = cert_to_dict(cert, meta={"model": b.name}, tables=small, all_outcomes="y_index" not in kw)
        return Certificate(doc, cert.ban_satisfied, cert.residual_sufficient)

    def pair(self, rho, sigma):
        b = self.bundle
        rep = conservation_report(rho, sigma, b.inst, b.povmX, b.povmX_out)
        bal = shannon_balance(rho, b.inst, b.povmX, kernel=self._kernel, povmX_out=b.povmX_out)
        return rep, bal, ""


class CounterDiagonalEvaluator(Evaluator):
    """Quantum counter on the number-diagonal route (any gamma*t up to 30)."""

    def __init__(self, model, observable: str):
        self.model = model
        self.observable = observable
        self.name = f"quantum_counter_{observable}"
        self.dim = model.spec.dim
        self.state_dim = model.state_dim
        self.discrete = observable == "number"
        self.notes = f"number-diagonal route, M_max = {model.m_max}"

    def certificate(self, cert_tol: float) -> Certificate:
        ban = self.observable == "number"
        reason = f"operator-level instrument not built (M_max = {self.model.m_max} outcomes)"
        return Certificate(unavailable_cert(reason, ban, {"model": self.name}), ban, float("nan"))

    def pair(self, rho, sigma):
        m = self.model
        if self.observable == "number":
            rep = counter_number_report(m.gamma_t, rho, sigma, m.m_max)
            return rep, counter_number_shannon(m.gamma_t, rho, m.m_max), ""
        try:
            rep, bal = counter_x_analysis(m, rho, sigma, shannon=True)
            return rep, bal, ""
        except ParameterRangeError as exc:
            rep, _ = counter_x_analysis(m, rho, sigma, shannon=False)
            return rep, None, str(exc)


def build_evaluator(model: str, params: dict) -> Evaluator:
    """Construct the evaluator for ``model`` at one parameter point."""
    if model == "qnd":
        dim = int(params["dim"])
        if dim < 2:
            raise cfgmod.ConfigError("qnd.dim must be at least 2")
        eps = float(params["eps"])
        if not 0 <= eps <= 1:
            raise cfgmod.ConfigError("qnd.eps must lie in [0, 1]")
        return BundleEvaluator(qnd_model(symmetric_kernel(dim, eps)))
    if model == "two_level":
        return BundleEvaluator(two_level_model(*_two_level_phis(params)))
    gamma, t = resolve_gamma_t(params)
    N = int(params["N"])
    spec = HilbertSpec.fock(N)
    if model == "photon_counting":
        return BundleEvaluator(photon_counting_model(gamma, t, spec, float(params["omega"])))
    if model.startswith("quantum_counter"):
        x_grid = default_counter_x_grid(float(params["x_step"]), float(params["x_max"]))
        route = params["route"]
        dense = {"auto": None, "dense": True, "diagonal": False}[route]
        cm = quantum_counter_model(gamma, t, spec, x_grid, float(params["leak_tol"]), dense=dense)
        observable = "number" if model.endswith("number") else "x"
        if cm.number is None:
            return CounterDiagonalEvaluator(cm, observable)
        bundle = cm.number if observable == "number" else cm.poisson
        return BundleEvaluator(bundle, cert_outcomes=64)
    if model == "homodyne":
        gt = gamma * t
        x_grid, y_grid = homodyne_default_grids(gt, N)
        f = float(params["step_factor"])
        if f != 1.0:
            x_grid = _rescale_step(x_grid, f)
            y_grid = _rescale_step(y_grid, f)
        return BundleEvaluator(homodyne_model(gamma, t, spec, x_grid, y_grid), int(params["cert_outcomes"]))
    if model == "heterodyne":
        grid = square_grid(float(params["half_width"]), int(params["points"]))
        return BundleEvaluator(heterodyne_model(gamma, t, spec, grid), int(params["cert_outcomes"]))
    raise cfgmod.ConfigError(f"unknown model {model!r}")


def _rescale_step(grid: OutcomeGrid, factor: float) -> OutcomeGrid:
    lo, hi = float(grid.labels[0]), float(grid.labels[-1])
    step = (hi - lo) / (len(grid) - 1)
    return OutcomeGrid.uniform(lo, hi, step * factor)


# -- a whole point ---------------------------------------------------------------

@dataclass
class PointResult:
    param_name: str
    param_value: object
    params: dict
    tolerances: dict
    certificate: Certificate
    pairs: list[PairResult] = field(default_factory=list)
    notes: str = ""


def tolerances_for(cfg: cfgmod.RunConfig) -> dict:
    cons, cert, shan = DEFAULT_TOLS[cfg.model]
    t = cfg.tolerances
    return {
        "conservation": cons if t.conservation is None else t.conservation,
        "certificate": cert if t.certificate is None else t.certificate,
        "shannon": shan if t.shannon is None else t.shannon,
    }


def evaluate_point(cfg: cfgmod.RunConfig, param_name: str, param_value, params: dict) -> PointResult:
    tol = tolerances_for(cfg)
    ev = build_evaluator(cfg.model, params)
    states = {s.name: build_state(s, ev.dim, ev.state_dim) for s in cfg.states}
    cert = ev.certificate(tol["certificate"])
    point = PointResult(param_name, param_value, params, tol, cert, notes=ev.notes)
    for a, b in cfg.pairs:
        rep, bal, note = ev.pair(states[a], states[b])
        point.pairs.append(PairResult(f"{a}|{b}", rep, bal, note))
    return point


# -- checks --------------------------------------------------------------------------

def observed_checks(point: PointResult, pr: PairResult) -> dict:
    """pass/fail/None per check for one pair; None means not evaluated."""
    tol = point.tolerances
    res = pr.report.residual
    out = {"conservation": "pass" if np.isfinite(res) and abs(res) <= tol["conservation"] else "fail"}
    r = point.certificate.residual
    out["certificate"] = None if math.isnan(r) else ("pass" if r <= tol["certificate"] else "fail")
    ban = point.certificate.ban
    out["ban"] = None if ban is None else ("pass" if ban else "fail")
    if pr.balance is None:
        out["shannon"] = None
    else:
        out["shannon"] = "pass" if abs(pr.balance.deficit) <= tol["shannon"] else "fail"
    return out


IMPLICIT_EXPECT = {"conservation": "pass", "certificate": "pass"}


def failures(point: PointResult, pr: PairResult, expect: dict) -> list[str]:
    """Human-readable mismatches between observed and expected checks."""
    want = {**IMPLICIT_EXPECT, **expect}
    got = observed_checks(point, pr)
    where = f"{point.param_name}={point.param_value} " if point.param_name else ""
    msgs = []
    for check, w in want.items():
        g = got.get(check)
        if g is None:
            if check in expect:
                msgs.append(f"{where}{pr.state_pair}: {check} not evaluable ({pr.shannon_note or 'unavailable'})")
            continue
        if g != w:
            msgs.append(f"{where}{pr.state_pair}: {check} expected {w}, observed {g}")
    return msgs
