"""Small-size invariant suites behind ``qmeas selftest``.

Every suite runs at N <= 12 on coarse grids.  Each invariant yields a value
and a pass flag; the JSON report holds values rounded to 4 significant
digits and no timings, so two runs produce byte-identical files.
"""

from __future__ import annotations

import math
import sys
import time
from dataclasses import dataclass, replace

import numpy as np

from . import config as cfgmod
from . import pipeline
from .classicality import (
    certify,
    check_equivalent_conditions,
    conservation_falsifier,
    hadamard_instrument,
    random_monomial_instrument,
)
from .entropy import conservation_report, shannon_balance
from .hilbert import (
    HilbertSpec,
    annihilation,
    basis_ket,
    coherent_state,
    creation,
    matrix_exponential,
    projector,
    random_density_matrix,
)
from .measurement import (
    KrausInstrument,
    completeness_residual,
    instrument_distribution,
    joint_successive_distribution,
    povm_distribution,
)
from .models import (
    heterodyne_model,
    homodyne_default_grids,
    homodyne_model,
    photon_count_kernel,
    photon_counting_model,
    qnd_model,
    quantum_counter_model,
    square_grid,
    symmetric_kernel,
    two_level_model,
)
from .serialize import dumps, from_document, loads, to_document

SELFTEST_SCHEMA = "qmeas-selftest/1"
N_SMALL = 12


@dataclass
class Check:
    suite: str
    name: str
    value: float
    ok: bool


def _round(v: float, digits: int = 4):
    if v is None or not np.isfinite(v):
        return None if v is None or np.isnan(v) else ("inf" if v > 0 else "-inf")
    return float(f"{v:.{digits - 1}e}")


class Suite:
    def __init__(self, name):
        self.name = name
        self.checks: list[Check] = []

    def le(self, name: str, value: float, tol: float) -> None:
        value = float(value)
        self.checks.append(Check(self.name, name, value, bool(np.isfinite(value) and value <= tol)))

    def flag(self, name: str, cond: bool, value: float = float("nan")) -> None:
        self.checks.append(Check(self.name, name, float(value), bool(cond)))

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.checks)


# -- suites ------------------------------------------------------------------------

def suite_hilbert() -> Suite:
    s = Suite("hilbert")
    spec = HilbertSpec.fock(N_SMALL)
    a, ad = annihilation(spec), creation(spec)
    expected = np.eye(spec.dim) - spec.dim * projector(basis_ket(spec, N_SMALL))
    s.le("commutator_truncation", np.abs(a @ ad - ad @ a - expected).max(), 1e-12)
    _, leak = coherent_state(1.0, spec, with_leakage=True)
    s.le("coherent_leakage", abs(leak - (1 - math.exp(-1) * sum(1 / math.factorial(n) for n in range(spec.dim)))), 1e-14)
    import scipy.linalg

    s.le("nilpotent_exponential", np.abs(matrix_exponential(0.7 * a) - scipy.linalg.expm(0.7 * a)).max(), 1e-12)
    return s


def _instruments(fault: str | None):
    spec = HilbertSpec.fock(N_SMALL)
    pc = photon_counting_model(1.0, 1.0, spec)
    inst = pc.inst
    if fault == "completeness":
        k = inst.kraus.copy()
        k[0] *= 1.05
        inst = KrausInstrument(inst.grid, k, name=inst.name)
    return {
        "qnd": qnd_model(symmetric_kernel(4, 0.1)).inst,
        "two_level": two_level_model(np.eye(2) / 2, np.eye(2) / 2).inst,
        "photon_counting": inst,
    }


def suite_measurement(fault: str | None) -> Suite:
    s = Suite("measurement")
    for name, inst in _instruments(fault).items():
        s.le(f"completeness[{name}]", completeness_residual(inst), 1e-12)
    spec = HilbertSpec.fock(N_SMALL)
    pc = photon_counting_model(1.0, 1.0, spec)
    rng = np.random.default_rng(11)
    rho = random_density_matrix(spec.dim, rng)
    sigma = random_density_matrix(spec.dim, rng)
    joint = joint_successive_distribution(rho, pc.inst, pc.povmX)
    py = instrument_distribution(rho, pc.inst)
    s.le("joint_marginal_y", np.abs(joint.marginal_y().density - py.density).max(), 1e-10)
    mix = 0.3 * rho + 0.7 * sigma
    d = povm_distribution(mix, pc.povmX).density
    d2 = 0.3 * povm_distribution(rho, pc.povmX).density + 0.7 * povm_distribution(sigma, pc.povmX).density
    s.le("povm_affine", np.abs(d - d2).max(), 1e-14)
    return s


def suite_entropy() -> Suite:
    s = Suite("entropy")
    rng = np.random.default_rng(5)
    qnd = qnd_model(symmetric_kernel(4, 0.1))
    worst = worst_def = 0.0
    for _ in range(10):
        r, g = qnd.random_state_pair(rng, diagonal=True)
        worst = max(worst, abs(conservation_report(r, g, qnd.inst, qnd.povmX).residual))
        worst_def = max(worst_def, abs(shannon_balance(r, qnd.inst, qnd.povmX).deficit))
    s.le("conservation[qnd]", worst, 1e-9)
    s.le("shannon_deficit[qnd]", worst_def, 1e-9)
    tl = two_level_model(np.eye(2) / 2, np.eye(2) / 2)
    worst = worst_post = worst_def = 0.0
    for _ in range(10):
        r, g = tl.random_state_pair(rng)
        rep = conservation_report(r, g, tl.inst, tl.povmX)
        worst, worst_post = max(worst, abs(rep.residual)), max(worst_post, abs(rep.d_post_avg))
        worst_def = max(worst_def, abs(shannon_balance(r, tl.inst, tl.povmX).deficit + math.log(2)))
    s.le("conservation[two_level]", worst, 1e-10)
    s.le("post_divergence[two_level]", worst_post, 0.0)
    s.le("shannon_deficit_ln2[two_level]", worst_def, 1e-10)
    pc = photon_counting_model(2.0, 1.0, HilbertSpec.fock(N_SMALL))
    r, g = pc.random_state_pair(rng)
    s.le("conservation[photon_counting]", abs(conservation_report(r, g, pc.inst, pc.povmX).residual), 1e-9)
    return s


def suite_classicality() -> Suite:
    s = Suite("classicality")
    spec = HilbertSpec.fock(N_SMALL)
    pc = photon_counting_model(math.log(2), 1.0, spec)
    cert = certify(pc.inst, pc.povmX)
    n = np.arange(spec.dim)
    kern = photon_count_kernel(n[None, :], n[:, None], math.log(2))
    s.le("binomial_kernel[photon_counting]", np.abs(cert.p_y_given_x - kern).max(), 1e-10)
    s.le("p(1|2;ln2)=0.5", abs(cert.p_y_given_x[2, 1] - 0.5), 1e-10)
    s.flag("ban_true[photon_counting]", bool(cert.ban_satisfied), cert.ban_deviation)
    tl = two_level_model(np.eye(2) / 2, np.eye(2) / 2)
    c2 = certify(tl.inst, tl.povmX)
    s.flag("ban_false[two_level]", c2.ban_satisfied is False, c2.ban_deviation)
    v = conservation_falsifier(hadamard_instrument(), tl.povmX, n_samples=50, rng_seed=0)
    s.flag("falsifier[hadamard]", (not v.condition_holds) and v.max_residual > 1e-3, v.max_residual)
    pc8 = photon_counting_model(2.0, 1.0, HilbertSpec.fock(6))
    v2 = conservation_falsifier(pc8.inst, pc8.povmX, n_samples=20, rng_seed=1)
    s.flag("falsifier[photon_counting]", v2.condition_holds and v2.consistent, v2.max_residual)
    rng = np.random.default_rng(2)
    unanimous = 0
    for _ in range(20):
        dim = int(rng.integers(2, 5))
        inst = random_monomial_instrument(dim, int(rng.integers(1, 4)), rng, n_z=int(rng.integers(1, 3)))
        unanimous += check_equivalent_conditions(inst, qnd_model(np.eye(dim)).povmX).unanimous
    s.flag("equivalent_conditions_unanimous", unanimous == 20, unanimous)
    return s


def suite_models() -> Suite:
    s = Suite("models")
    rng = np.random.default_rng(9)
    cm = quantum_counter_model(1.0, 1.0, HilbertSpec.fock(8))
    r, g = cm.number.random_state_pair(rng)
    for b in (cm.number, cm.poisson):
        rep = conservation_report(r, g, b.inst, b.povmX, b.povmX_out)
        s.le(f"conservation[{b.name}]", abs(rep.residual), 1e-6)
    spec = HilbertSpec.fock(8)
    xg, yg = homodyne_default_grids(1.0, 8, points_per_width=4)
    hom = homodyne_model(1.0, 1.0, spec, xg, yg)
    r, g = hom.random_state_pair(rng)
    s.le("conservation[homodyne]", abs(conservation_report(r, g, hom.inst, hom.povmX).residual), 1e-4)
    k = hom.analytic.kernel(hom.povmX.grid.labels, hom.inst.grid.labels)
    s.le("shannon_deficit[homodyne]", abs(shannon_balance(r, hom.inst, hom.povmX, kernel=k).deficit + 0.5), 2e-2)
    het = heterodyne_model(1.0, 1.0, spec, square_grid(4.0, 25))
    a, b = coherent_state(0.5, spec), coherent_state(-0.3 + 0.4j, spec)
    s.le("conservation[heterodyne]", abs(conservation_report(a, b, het.inst, het.povmX).residual), 1e-3)
    return s


SELFTEST_CONFIG = """
model = "qnd"
[params]
dim = 3
eps = 0.2
[[states]]
name = "a"
kind = "random"
seed = 3
[[states]]
name = "b"
kind = "mixed"
[expect]
conservation = "pass"
ban = "pass"
"""


def suite_cli() -> Suite:
    from .cli import report_document

    s = Suite("cli")
    try:
        cfgmod.loads(SELFTEST_CONFIG + "\nbogus = 1\n")
        rejected = False
    except cfgmod.ConfigError:
        rejected = True
    s.flag("strict_unknown_keys", rejected)
    cfg = cfgmod.loads(SELFTEST_CONFIG)
    texts = []
    for _ in range(2):
        results = [pipeline.evaluate_point(cfg, *p) for p in cfg.points()]
        texts.append(dumps(report_document(cfg, results, [])))
    s.flag("deterministic_report", texts[0] == texts[1])
    qnd = qnd_model(symmetric_kernel(3, 0.2))
    back = from_document(loads(dumps(to_document(qnd.inst))))
    s.flag("roundtrip_instrument", np.array_equal(back.kraus, qnd.inst.kraus))
    return s


def run_suites(inject_fault: str | None = None):
    return [
        ("hilbert", suite_hilbert),
        ("measurement", lambda: suite_measurement(inject_fault)),
        ("entropy", suite_entropy),
        ("classicality", suite_classicality),
        ("models", suite_models),
        ("cli", suite_cli),
    ]


def run_selftest(report: str | None = None, inject_fault: str | None = None, out=None) -> int:
    out = out or sys.stdout
    suites = []
    for name, fn in run_suites(inject_fault):
        t0 = time.perf_counter()
        try:
            suite = fn()
        except Exception as exc:  # noqa: BLE001 - a crashing suite is a failed suite
            suite = Suite(name)
            suite.flag(f"error: {type(exc).__name__}: {exc}", False)
        dt = time.perf_counter() - t0
        print(f"[{'PASS' if suite.ok else 'FAIL'}] {name} ({len(suite.checks)} invariants, {dt:.1f}s)", file=out)
        for c in suite.checks:
            if not c.ok:
                print(f"  FAIL {name}.{c.name}: invariant violated (value {c.value:.3e})", file=out)
        suites.append(suite)
    ok = all(s.ok for s in suites)
    if report:
        doc = {
            "schema": SELFTEST_SCHEMA,
            "status": "pass" if ok else "fail",
            "suites": [
                {
                    "name": s.name,
                    "status": "pass" if s.ok else "fail",
                    "invariants": [{"name": c.name, "ok": c.ok, "value": _round(c.value)} for c in s.checks],
                }
                for s in suites
            ],
        }
        with open(report, "w", encoding="utf-8", newline="") as fh:
            fh.write(dumps(doc))
    print("selftest: " + ("ok" if ok else "FAILED"), file=out)
    return 0 if ok else 1
