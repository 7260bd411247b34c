"""Acceptance criteria 1-9.

Each test prints one ``[PASS]``/``[FAIL]`` line with the measured quantities
and runtime, then asserts.  Tolerances are the contract values; nothing here
is loosened to make a run pass.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from qmeas import config as cfgmod
from qmeas import pipeline
from qmeas.classicality import (
    certify,
    check_equivalent_conditions,
    conservation_falsifier,
    hadamard_instrument,
    jacobian_consistent,
    random_monomial_instrument,
    tilde_jacobian,
)
from qmeas.entropy import conservation_report, relative_entropy, shannon_balance
from qmeas.hilbert import (
    HilbertSpec,
    coherent_state,
    number_state,
    random_density_matrix,
    random_diagonal_state,
    thermal_state,
)
from qmeas.measurement import OutcomeGrid, PovmDensity, instrument_distribution, povm_distribution
from qmeas.models import (
    counter_conditional_gap,
    counter_number_distance,
    counter_number_report,
    counter_x_analysis,
    default_counter_x_grid,
    heterodyne_model,
    homodyne_model,
    homodyne_povm_closed_form,
    photon_count_kernel,
    photon_counting_model,
    poisson_kernel_effects,
    q_relative_entropy,
    qnd_model,
    quantum_counter_model,
    square_grid,
    symmetric_kernel,
    two_level_model,
)


@pytest.fixture
def verdict(capsys):
    """Print a criterion line to the terminal even under output capture."""

    def emit(number, ok, detail, elapsed):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail} ({elapsed:.2f}s)")

    return emit


def _hs_pair(rng, dim, k=None):
    k = k or dim
    out = []
    for _ in range(2):
        rho = np.zeros((dim, dim), dtype=complex)
        rho[:k, :k] = random_density_matrix(k, rng)
        out.append(rho)
    return out


def _cfg_state(name, dim, state_dim):
    cfg = cfgmod.default_config("homodyne")
    spec = next(s for s in cfg.states if s.name == name)
    return pipeline.build_state(spec, dim, state_dim)


# -- 1 ---------------------------------------------------------------------------

def test_criterion_1_qnd_conservation(verdict):
    t0 = time.perf_counter()
    b = qnd_model(symmetric_kernel(4, 0.1))
    rng = np.random.default_rng(1)
    worst_res = worst_def = 0.0
    for _ in range(50):
        rho, sigma = random_diagonal_state(4, rng), random_diagonal_state(4, rng)
        worst_res = max(worst_res, abs(conservation_report(rho, sigma, b.inst, b.povmX).residual))
        worst_def = max(worst_def, abs(shannon_balance(rho, b.inst, b.povmX).deficit))
    dt = time.perf_counter() - t0
    ok = worst_res < 1e-9 and worst_def < 1e-9 and dt < 1.0
    verdict(1, ok, f"QND max|residual|={worst_res:.2e} max|deficit|={worst_def:.2e}", dt)
    assert ok


# -- 2 ---------------------------------------------------------------------------

def test_criterion_2_two_level(verdict):
    t0 = time.perf_counter()
    b = two_level_model(np.eye(2) / 2, np.eye(2) / 2)
    rng = np.random.default_rng(2)
    worst_res = worst_dev = max_post = 0.0
    for _ in range(50):
        rho, sigma = _hs_pair(rng, 2)
        rep = conservation_report(rho, sigma, b.inst, b.povmX)
        worst_res = max(worst_res, abs(rep.residual))
        max_post = max(max_post, abs(rep.d_post_avg))
        worst_dev = max(worst_dev, abs(shannon_balance(rho, b.inst, b.povmX).deficit + math.log(2)))
    ban = certify(b.inst, b.povmX).ban_satisfied
    dt = time.perf_counter() - t0
    ok = worst_res < 1e-10 and max_post == 0.0 and worst_dev < 1e-10 and ban is False and dt < 1.0
    verdict(2, ok, f"two-level max|residual|={worst_res:.2e} max E[D_post]={max_post:.1e} "
                   f"max|deficit+ln2|={worst_dev:.2e} ban={ban}", dt)
    assert ok


# -- 3 ---------------------------------------------------------------------------

def test_criterion_3_photon_counting(verdict):
    t0 = time.perf_counter()
    spec = HilbertSpec.fock(20)
    n = np.arange(21)
    rho = coherent_state(1.5, spec)
    sigma = thermal_state(1.0, spec)
    kernel_err = res = 0.0
    bans = []
    spot = None
    for gt in (math.log(2), 2.0, 30.0):
        b = photon_counting_model(1.0, gt, spec)
        cert = certify(b.inst, b.povmX)
        want = photon_count_kernel(n[None, :], n[:, None], gt)
        kernel_err = max(kernel_err, float(np.abs(cert.p_y_given_x - want).max()))
        live = ~cert.null_mask
        q_want = b.analytic.q(n, n)
        kernel_err = max(kernel_err, float(np.abs(cert.q[live] - q_want[live]).max()))
        if gt == math.log(2):
            spot = cert.p_y_given_x[2, 1]
        bans.append(bool(cert.ban_satisfied))
        rep = conservation_report(rho, sigma, b.inst, b.povmX)
        res = max(res, abs(rep.residual))
        if gt == 30.0:
            long_gap = abs(rep.lhs - rep.d_pre)
            long_post = rep.d_post_avg
    dt = time.perf_counter() - t0
    ok = (kernel_err < 1e-10 and abs(spot - 0.5) < 1e-10 and res < 1e-9 and long_gap < 1e-8
          and long_post < 1e-8 and all(bans) and dt < 10.0)
    verdict(3, ok, f"photon counting kernel err={kernel_err:.1e} p(1|2)={spot:.12f} max|residual|={res:.1e} "
                   f"gt=30 |D_Y-D_N|={long_gap:.1e} E[D_post]={long_post:.1e} ban={bans}", dt)
    assert ok


# -- 4 ---------------------------------------------------------------------------

COUNTER_GTS = (1.0, 2.0, 4.0, 8.0)


def test_criterion_4_quantum_counter(verdict):
    t0 = time.perf_counter()
    spec = HilbertSpec.fock(16)
    grid = default_counter_x_grid(0.05, 40.0)
    rng = np.random.default_rng(4)
    pairs = [_hs_pair(rng, 17, 13) for _ in range(2)]
    eff = PovmDensity(grid, poisson_kernel_effects(grid.labels, 16), diagonal=True)
    res_n = res_x = gap_err = 0.0
    post_x = {gt: 0.0 for gt in COUNTER_GTS}
    deficits = {}
    limit_err = 0.0
    for gt in COUNTER_GTS:
        m = quantum_counter_model(1.0, gt, spec, grid, dense=False)
        for i, (rho, sigma) in enumerate(pairs):
            rep_n = counter_number_report(gt, rho, sigma, m.m_max)
            res_n = max(res_n, abs(rep_n.residual))
            want_bal = gt <= 4.0 and i == 0
            rep_x, bal = counter_x_analysis(m, rho, sigma, shannon=want_bal)
            res_x = max(res_x, abs(rep_x.residual))
            post_x[gt] = max(post_x[gt], rep_x.d_post_avg)
            if want_bal:
                deficits[gt] = bal.deficit
            dx = relative_entropy(povm_distribution(rho, eff), povm_distribution(sigma, eff))
            gap = counter_conditional_gap(m, rho, sigma)
            gap_err = max(gap_err, abs(counter_number_distance(rho, sigma) - dx - gap))
            if gt == COUNTER_GTS[-1]:
                limit_err = max(limit_err, abs(rep_n.d_post_avg - gap))
    posts = [post_x[gt] for gt in COUNTER_GTS]
    monotone = all(a > b for a, b in zip(posts, posts[1:]))
    def_err = max(abs(d + gt) for gt, d in deficits.items())
    # Ban: operator-level certificates on the dense route
    params = dict(cfgmod.MODEL_PARAMS["quantum_counter_number"], gamma_t=1.0, route="dense")
    ban_n = pipeline.build_evaluator("quantum_counter_number", params).certificate(1e-8).ban
    ban_x = pipeline.build_evaluator("quantum_counter_x", params).certificate(1e-8).ban
    dt = time.perf_counter() - t0
    ok = (res_n < 1e-6 and res_x < 1e-6 and monotone and gap_err < 1e-4 and limit_err < 1e-4
          and def_err < 2e-2 and ban_n is True and ban_x is False and dt < 60.0)
    verdict(4, ok, f"quantum counter max|res_N|={res_n:.1e} max|res_X|={res_x:.1e} "
                   f"E[D_post^X]={['%.1e' % p for p in posts]} monotone={monotone} chain-rule err={gap_err:.1e} "
                   f"gt=8 limit err={limit_err:.1e} max|deficit+gt| (gt<=4)={def_err:.1e} "
                   f"ban N={ban_n} X={ban_x}", dt)
    assert ok


# -- 5 ---------------------------------------------------------------------------

def test_criterion_5_homodyne(verdict):
    t0 = time.perf_counter()
    spec = HilbertSpec.fock(20)
    hom = homodyne_model(1.0, 1.0, spec)
    eff = hom.inst.effects()
    keep = spec.dim - hom.guard
    povm_err = 0.0
    for j in range(len(hom.inst.grid)):
        y = hom.inst.grid.labels[j]
        ref = math.exp(-y**2 / (2 * -math.expm1(-1.0))) / math.sqrt(2 * math.pi * -math.expm1(-1.0))
        closed = homodyne_povm_closed_form(y, 1.0, spec)
        povm_err = max(povm_err, float(np.abs((eff[j] - closed)[:keep, :keep]).max() * ref))
    residuals = []
    for factor in (16.0, 8.0, 4.0, 2.0, 1.0):
        params = dict(cfgmod.MODEL_PARAMS["homodyne"], gamma_t=1.0, N=20, step_factor=factor)
        ev = pipeline.build_evaluator("homodyne", params)
        rho = _cfg_state("rand0", ev.dim, ev.state_dim)
        sigma = _cfg_state("rand1", ev.dim, ev.state_dim)
        rep, bal, _ = ev.pair(rho, sigma)
        residuals.append(abs(rep.residual))
    ratios = [a / max(b, 1e-300) for a, b in zip(residuals, residuals[1:])]
    cert = ev.certificate(1e-8)
    x = ev.bundle.povmX.grid.labels[::40]
    y = ev.bundle.inst.grid.labels[::40]
    jac = tilde_jacobian(ev.bundle.analytic.x_tilde, x, y)
    jac_err = float(np.abs(jac - math.exp(-0.5)).max())
    dt = time.perf_counter() - t0
    ok = (povm_err < 1e-8 and residuals[-1] < 1e-4 and all(r >= 3 for r in ratios)
          and abs(bal.deficit + 0.5) < 2e-2 and jac_err < 1e-8 and not jacobian_consistent(True, jac)
          and cert.ban is False and dt < 120.0)
    verdict(5, ok, f"homodyne POVM err={povm_err:.1e} residual(step x16..x1)={['%.1e' % r for r in residuals]} "
                   f"min ratio={min(ratios):.1f} deficit={bal.deficit:.6f} |J-e^-1/2|={jac_err:.1e} ban={cert.ban}", dt)
    assert ok


# -- 6 ---------------------------------------------------------------------------

def test_criterion_6_heterodyne(verdict):
    t0 = time.perf_counter()
    spec = HilbertSpec.fock(16)
    grid = square_grid(4.0, 41)
    late = heterodyne_model(20.0, 1.0, spec, grid)
    py = instrument_distribution(coherent_state(0.8, spec), late.inst)
    leb = py.density * late.inst.grid.weights / late.povmX.grid.weights
    yl = late.inst.grid.labels
    q_err = float(np.abs(leb - np.exp(-np.abs(np.conj(yl) - 0.8) ** 2) / np.pi).max())

    het = heterodyne_model(1.0, 1.0, spec, grid)
    k = het.state_dim
    pairs = {
        "rand0|rand1": (_cfg_state("rand0", spec.dim, k), _cfg_state("rand1", spec.dim, k)),
        "|1>|0.5>": (number_state(spec, 1), coherent_state(0.5, spec)),
    }
    res = 0.0
    for rho, sigma in pairs.values():
        res = max(res, abs(conservation_report(rho, sigma, het.inst, het.povmX).residual))
    rho = pairs["rand0|rand1"][0]
    kernel = het.analytic.kernel(het.povmX.grid.labels, het.inst.grid.labels)
    deficit = shannon_balance(rho, het.inst, het.povmX, kernel=kernel).deficit
    d_q = q_relative_entropy(number_state(spec, 0), np.eye(spec.dim) / spec.dim, grid)
    dt = time.perf_counter() - t0
    ok = q_err < 1e-3 and res < 1e-3 and abs(deficit + 1.0) < 5e-2 and d_q <= math.log(spec.dim) and dt < 300.0
    verdict(6, ok, f"heterodyne gt=20 |density-Q|={q_err:.1e} max|residual|={res:.1e} deficit={deficit:.4f} "
                   f"D_Q(|0>||I/17)={d_q:.4f}<=ln17={math.log(17):.4f}", dt)
    assert ok


# -- 7 ---------------------------------------------------------------------------

def _continuous_sweep(bundle, n, seed):
    rng = np.random.default_rng(seed)
    d = bundle.inst.dim_in
    k = bundle.state_dim or d
    worst = 0.0
    for _ in range(n):
        rho, sigma = _hs_pair(rng, d, k)
        rep = conservation_report(rho, sigma, bundle.inst, bundle.povmX, bundle.povmX_out)
        worst = max(worst, abs(rep.residual))
    return worst


def test_criterion_7_falsifier(verdict):
    t0 = time.perf_counter()
    pvm2 = PovmDensity(OutcomeGrid.discrete(2), np.eye(2), diagonal=True)
    had = conservation_falsifier(hadamard_instrument(), pvm2, n_samples=200, rng_seed=7)
    had_ok = (not had.condition_holds) and had.max_residual > 1e-3

    counter = quantum_counter_model(1.0, 1.0, HilbertSpec.fock(8))
    discrete = {
        "qnd": qnd_model(symmetric_kernel(4, 0.1)),
        "two_level": two_level_model(np.eye(2) / 2, np.eye(2) / 2),
        "photon_counting": photon_counting_model(1.0, 1.0, HilbertSpec.fock(8)),
        "quantum_counter_number": counter.number,
    }
    worst = {}
    for name, b in discrete.items():
        v = conservation_falsifier(b.inst, b.povmX, n_samples=200, rng_seed=7, state_dim=b.state_dim,
                               povmX_out=b.povmX_out)
        worst[name] = (v.max_residual, 1e-8, v.condition_holds)
    continuous = {
        "quantum_counter_x": counter.poisson,
        "homodyne": homodyne_model(1.0, 1.0, HilbertSpec.fock(8)),
        "heterodyne": heterodyne_model(1.0, 1.0, HilbertSpec.fock(6), square_grid(3.5, 25)),
    }
    for name, b in continuous.items():
        worst[name] = (_continuous_sweep(b, 200, 7), pipeline.DEFAULT_TOLS[name][0], True)
    shipped_ok = all(r < tol and holds for r, tol, holds in worst.values())
    dt = time.perf_counter() - t0
    ok = had_ok and shipped_ok and dt < 30.0
    detail = " ".join(f"{k}={v[0]:.1e}" for k, v in worst.items())
    verdict(7, ok, f"Hadamard cert residual={had.residual_sufficient:.2e} max|residual|={had.max_residual:.2e} "
                   f"({had.n_violations}/200 above tol); shipped max|residual|: {detail}", dt)
    assert ok


# -- 8 ---------------------------------------------------------------------------

def test_criterion_8_equivalent_conditions(verdict):
    t0 = time.perf_counter()
    unanimous = 0
    verdicts = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        dim = int(rng.integers(2, 5))
        n_y = int(rng.integers(1, 5))
        n_z = int(rng.integers(1, 3))
        inst = random_monomial_instrument(dim, n_y, rng, n_z=n_z)
        pvm = PovmDensity(OutcomeGrid.discrete(dim), np.eye(dim), diagonal=True)
        rep = check_equivalent_conditions(inst, pvm)
        unanimous += rep.unanimous
        verdicts.append(rep.ban)
    dt = time.perf_counter() - t0
    n_true = sum(verdicts)
    ok = unanimous == 100 and 0 < n_true < 100 and dt < 10.0
    verdict(8, ok, f"four conditions unanimous on {unanimous}/100 instruments ({n_true} all-true, "
                   f"{100 - n_true} all-false)", dt)
    assert ok


# -- 9 ---------------------------------------------------------------------------

def test_criterion_9_selftest(verdict, tmp_path):
    t0 = time.perf_counter()
    outs = []
    codes = []
    for i in range(2):
        path = tmp_path / f"selftest{i}.json"
        proc = subprocess.run([sys.executable, "-m", "qmeas.cli", "selftest", "--report", str(path)],
                              capture_output=True, text=True, timeout=300)
        codes.append(proc.returncode)
        outs.append(path.read_bytes())
    dt = time.perf_counter() - t0
    ok = codes == [0, 0] and outs[0] == outs[1] and dt / 2 < 120.0
    verdict(9, ok, f"selftest exit codes={codes} reports identical={outs[0] == outs[1]} "
                   f"mean runtime={dt / 2:.1f}s", dt)
    assert ok
