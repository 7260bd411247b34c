"""Classical information functionals on gridded distributions (natural log).

Densities are taken with respect to each grid's reference measure, so on
continuous grids the Shannon entropy is the differential entropy relative to
that measure.  Relative entropies that diverge (``p > 0`` where ``q`` is at
or below the floor) return ``inf`` instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measurement import (
    Distribution,
    JointDistribution,
    KrausInstrument,
    OutcomeGrid,
    PovmDensity,
    check_same_grid,
    instrument_distribution,
    joint_successive_distribution,
    povm_distribution,
)

DENSITY_FLOOR = 1e-300
CHAIN_TOL = 1e-9


def _rel_entropy_terms(w: np.ndarray, p: np.ndarray, q: np.ndarray, floor: float = DENSITY_FLOOR) -> float:
    mask = p > floor
    if np.any(q[mask] <= floor):
        return float("inf")
    pm = p[mask]
    return float(np.sum(w[mask] * pm * np.log(pm / q[mask])))


def relative_entropy(p: Distribution, q: Distribution) -> float:
    """D(p||q) = sum w p ln(p/q) with 0 ln(0/q) = 0."""
    check_same_grid(p.grid, q.grid)
    return _rel_entropy_terms(p.grid.weights, p.density, q.density)


def shannon_entropy(p: Distribution) -> float:
    """-sum w p ln p; differential entropy on continuous grids."""
    d = p.density
    mask = d > DENSITY_FLOOR
    return float(-np.sum(p.grid.weights[mask] * d[mask] * np.log(d[mask])))


def _product(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    return np.outer(px, py)


def mutual_information(joint: JointDistribution) -> float:
    """D(p_XY || p_X p_Y) over the product grid."""
    px = joint.marginal_x().density
    py = joint.marginal_y().density
    w = np.outer(joint.x_grid.weights, joint.y_grid.weights).ravel()
    return _rel_entropy_terms(w, joint.density.ravel(), _product(px, py).ravel())


def joint_relative_entropy(jr: JointDistribution, js: JointDistribution) -> float:
    check_same_grid(jr.x_grid, js.x_grid)
    check_same_grid(jr.y_grid, js.y_grid)
    w = np.outer(jr.x_grid.weights, jr.y_grid.weights).ravel()
    return _rel_entropy_terms(w, jr.density.ravel(), js.density.ravel())


def conditional_relative_entropies(
    jr: JointDistribution, js: JointDistribution, py_r: np.ndarray | None = None, py_s: np.ndarray | None = None
) -> np.ndarray:
    """Per-outcome D(p~_rho(.|y) || p~_sigma(.|y)).

    Conditionals divide by the supplied Y densities (default: the joints' own
    marginals).  Outcomes with zero rho-probability get 0.
    """
    py_r = jr.marginal_y().density if py_r is None else py_r
    py_s = js.marginal_y().density if py_s is None else py_s
    wx = jr.x_grid.weights
    out = np.zeros(len(jr.y_grid))
    for j in range(len(jr.y_grid)):
        if py_r[j] <= DENSITY_FLOOR:
            continue
        if py_s[j] <= DENSITY_FLOOR:
            out[j] = float("inf")
            continue
        out[j] = _rel_entropy_terms(wx, jr.density[:, j] / py_r[j], js.density[:, j] / py_s[j])
    return out


def _expect(weights: np.ndarray, prob: np.ndarray, values: np.ndarray) -> float:
    """sum w p v skipping null outcomes so inf * 0 never turns into nan."""
    mask = prob > DENSITY_FLOOR
    return float(np.sum(weights[mask] * prob[mask] * values[mask]))


@dataclass(frozen=True)
class ChainRule:
    total: float
    y_term: float
    conditional_term: float

    def __iter__(self):
        return iter((self.total, self.y_term, self.conditional_term))

    @property
    def gap(self) -> float:
        return self.total - self.y_term - self.conditional_term


def chain_rule_decompose(jr: JointDistribution, js: JointDistribution) -> ChainRule:
    """D(p~_rho||p~_sigma) = D(p^Y_rho||p^Y_sigma) + E_rho[D(conditionals)]."""
    total = joint_relative_entropy(jr, js)
    mr, ms = jr.marginal_y(), js.marginal_y()
    y_term = relative_entropy(mr, ms)
    cond = conditional_relative_entropies(jr, js)
    conditional = _expect(mr.grid.weights, mr.density, cond)
    return ChainRule(total, y_term, conditional)


@dataclass
class ConservationReport:
    """Both sides of D(p^Y_rho||p^Y_sigma) = D_X(rho||sigma) - E_rho[D_X(rho_y||sigma_y)]."""

    lhs: float
    d_pre: float
    d_post_avg: float
    residual: float
    residual_joint: float = float("nan")
    per_outcome: list = field(default_factory=list)
    tolerances: dict = field(default_factory=dict)

    @property
    def finite(self) -> bool:
        return all(np.isfinite(v) for v in (self.lhs, self.d_pre, self.d_post_avg))

    def as_dict(self) -> dict:
        return {
            "lhs_nats": self.lhs,
            "d_pre_nats": self.d_pre,
            "d_post_avg_nats": self.d_post_avg,
            "residual_nats": self.residual,
            "residual_joint_nats": self.residual_joint,
        }


def _residual(lhs: float, d_pre: float, d_post: float) -> float:
    if not all(np.isfinite((lhs, d_pre, d_post))):
        return float("inf")
    return lhs - d_pre + d_post


def report_from_parts(
    py_rho: Distribution,
    py_sigma: Distribution,
    px_rho: Distribution,
    px_sigma: Distribution,
    d_post: np.ndarray,
    total_joint: float = float("nan"),
    tolerances: dict | None = None,
) -> ConservationReport:
    """Assemble a report from outcome distributions and per-outcome post-measurement divergences."""
    lhs = relative_entropy(py_rho, py_sigma)
    d_pre = relative_entropy(px_rho, px_sigma)
    d_post_avg = _expect(py_rho.grid.weights, py_rho.density, d_post)
    residual = _residual(lhs, d_pre, d_post_avg)
    residual_joint = total_joint - d_pre if np.isfinite(total_joint) and np.isfinite(d_pre) else float("nan")
    per = [
        (py_rho.grid.labels[j].item(), float(py_rho.density[j]), float(d_post[j]))
        for j in range(len(py_rho.grid))
    ]
    return ConservationReport(lhs, d_pre, d_post_avg, residual, residual_joint, per, dict(tolerances or {}))


def conservation_report(
    rho: np.ndarray,
    sigma: np.ndarray,
    inst: KrausInstrument,
    povmX: PovmDensity,
    povmX_out: PovmDensity | None = None,
    chain_tol: float = CHAIN_TOL,
) -> ConservationReport:
    """Evaluate the conservation law and its joint-distribution form for one state pair.

    The post-measurement X distributions are conditionals of the successive
    joint distribution normalized by the instrument's exact p^Y, and the joint
    form D(p~_rho||p~_sigma) - D_X(rho||sigma) is recomputed independently;
    the two residuals must agree to ``chain_tol`` (continuous grids: plus the
    quadrature defect of the joint's Y-marginal, which is recorded).
    """
    py_r = instrument_distribution(rho, inst)
    py_s = instrument_distribution(sigma, inst)
    px_r = povm_distribution(rho, povmX)
    px_s = povm_distribution(sigma, povmX)
    jr = joint_successive_distribution(rho, inst, povmX, povmX_out)
    js = joint_successive_distribution(sigma, inst, povmX, povmX_out)
    d_post = conditional_relative_entropies(jr, js, py_r.density, py_s.density)
    total = joint_relative_entropy(jr, js)
    report = report_from_parts(py_r, py_s, px_r, px_s, d_post, total, {"chain_tol": chain_tol})
    marg_defect = float(np.max(np.abs(jr.marginal_y().density - py_r.density) * inst.grid.weights, initial=0.0))
    report.tolerances["marginal_defect"] = marg_defect
    if report.finite and np.isfinite(report.residual_joint) and marg_defect < 1e-13:
        gap = abs(report.residual - report.residual_joint)
        if gap > chain_tol:
            raise AssertionError(f"residual definitions disagree by {gap:.3e}")
    return report


@dataclass(frozen=True)
class ShannonBalance:
    mutual_info: float
    entropy_drop: float
    deficit: float

    def __iter__(self):
        return iter((self.mutual_info, self.entropy_drop, self.deficit))


def pvm_kernel(inst: KrausInstrument, povmX: PovmDensity) -> np.ndarray:
    """p(y|x) = tr[E_x E^Y_y] / tr[E_x], exact for a discrete PVM. Shape (Kx, Ky)."""
    ey = inst.effects()
    ex = povmX.dense_effects()
    num = np.einsum("xij,yji->xy", ex, ey).real
    den = np.trace(ex, axis1=1, axis2=2).real
    return num / den[:, None]


def prior_joint(px: Distribution, kernel: np.ndarray, y_grid: OutcomeGrid) -> JointDistribution:
    """Pre-measurement joint p(y|x) p^X(x) of the coarse-graining model."""
    return JointDistribution(px.grid, y_grid, kernel * px.density[:, None])


def shannon_balance(
    rho: np.ndarray,
    inst: KrausInstrument,
    povmX: PovmDensity,
    kernel: np.ndarray | None = None,
    povmX_out: PovmDensity | None = None,
) -> ShannonBalance:
    """Mutual information I(X:Y), entropy drop H(X) - E[H_{rho_y}(X)] and their difference.

    I(X:Y) is taken in the coarse-graining joint p(y|x) p^X_rho(x); ``kernel``
    (shape (Kx, Ky), density w.r.t. the Y grid's measure) must be supplied for
    anything but a discrete PVM.  ``deficit = entropy_drop - mutual_info``.
    """
    if kernel is None:
        kernel = pvm_kernel(inst, povmX)
    px = povm_distribution(rho, povmX)
    py = instrument_distribution(rho, inst)
    mi = mutual_information(prior_joint(px, kernel, inst.grid))
    joint = joint_successive_distribution(rho, inst, povmX, povmX_out)
    h_post = np.zeros(len(inst.grid))
    for j in range(len(inst.grid)):
        if py.density[j] > DENSITY_FLOOR:
            h_post[j] = shannon_entropy(Distribution(joint.x_grid, joint.density[:, j] / py.density[j]))
    drop = shannon_entropy(px) - _expect(inst.grid.weights, py.density, h_post)
    return ShannonBalance(mi, drop, drop - mi)
