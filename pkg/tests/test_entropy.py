import math

import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from qmeas.entropy import (
    chain_rule_decompose,
    conservation_report,
    mutual_information,
    relative_entropy,
    shannon_balance,
    shannon_entropy,
)
from qmeas.hilbert import HilbertSpec, coherent_state, random_density_matrix
from qmeas.measurement import Distribution, JointDistribution, OutcomeGrid, joint_successive_distribution
from qmeas.models import (
    heterodyne_model,
    homodyne_model,
    photon_counting_model,
    qnd_model,
    symmetric_kernel,
    two_level_model,
)

G2 = OutcomeGrid.discrete(2)


def dist(p):
    return Distribution(OutcomeGrid.discrete(len(p)), np.asarray(p, float))


def test_relative_entropy_examples():
    assert relative_entropy(dist([0.3, 0.7]), dist([0.3, 0.7])) == 0.0
    # hand sum: 0.5 ln 2 + 0.5 ln(2/3)
    assert abs(relative_entropy(dist([0.5, 0.5]), dist([0.25, 0.75])) - 0.14384103622589045) < 1e-15
    assert abs(relative_entropy(dist([1, 0]), dist([0.5, 0.5])) - math.log(2)) < 1e-15
    assert relative_entropy(dist([0.5, 0.5]), dist([1, 0])) == float("inf")


def test_shannon_entropy_examples():
    assert abs(shannon_entropy(dist([0.5, 0.5])) - math.log(2)) < 1e-15
    assert shannon_entropy(dist([0, 1, 0])) == 0.0
    g = OutcomeGrid.uniform(-10, 10, 0.05)
    gauss = Distribution(g, np.exp(-g.labels**2 / 2) / math.sqrt(2 * math.pi))
    assert abs(shannon_entropy(gauss) - 0.5 * math.log(2 * math.pi * math.e)) < 1e-8


def test_mutual_information_examples():
    prod = JointDistribution(G2, G2, np.outer([0.3, 0.7], [0.6, 0.4]))
    assert abs(mutual_information(prod)) < 1e-15
    corr = JointDistribution(G2, G2, np.diag([0.5, 0.5]))
    assert abs(mutual_information(corr) - math.log(2)) < 1e-15


def test_chain_rule_examples(rng):
    j = JointDistribution(G2, G2, np.outer([0.3, 0.7], [0.6, 0.4]))
    assert tuple(chain_rule_decompose(j, j)) == (0.0, 0.0, 0.0)
    js = JointDistribution(G2, G2, np.outer([0.5, 0.5], [0.6, 0.4]))
    cr = chain_rule_decompose(j, js)
    assert abs(cr.conditional_term - relative_entropy(dist([0.3, 0.7]), dist([0.5, 0.5]))) < 1e-15
    assert abs(cr.y_term) < 1e-15
    tl = two_level_model(np.eye(2) / 2, np.eye(2) / 2)
    r, s = (random_density_matrix(2, rng) for _ in range(2))
    cr = chain_rule_decompose(joint_successive_distribution(r, tl.inst, tl.povmX),
                              joint_successive_distribution(s, tl.inst, tl.povmX))
    assert abs(cr.conditional_term) < 1e-15


def test_report_vanishes_for_equal_states(rng):
    qnd = qnd_model(symmetric_kernel(4, 0.1))
    r = random_density_matrix(4, rng)
    rep = conservation_report(r, r, qnd.inst, qnd.povmX)
    assert (rep.lhs, rep.d_pre, rep.d_post_avg) == (0.0, 0.0, 0.0)
    assert rep.residual == 0.0


@given(st.integers(0, 2**32 - 1))
def test_qnd_conservation_and_shannon(seed):
    rng = np.random.default_rng(seed)
    qnd = qnd_model(symmetric_kernel(4, 0.1))
    r, s = qnd.random_state_pair(rng, diagonal=True)
    rep = conservation_report(r, s, qnd.inst, qnd.povmX)
    assert abs(rep.residual) < 1e-9
    assert rep.lhs <= rep.d_pre + 1e-12
    assert abs(shannon_balance(r, qnd.inst, qnd.povmX).deficit) < 1e-9


@given(st.integers(0, 2**32 - 1))
def test_chain_rule_identity_on_photon_counting(seed):
    rng = np.random.default_rng(seed)
    pc = photon_counting_model(0.7, 1.0, HilbertSpec.fock(6))
    r, s = pc.random_state_pair(rng)
    cr = chain_rule_decompose(joint_successive_distribution(r, pc.inst, pc.povmX),
                              joint_successive_distribution(s, pc.inst, pc.povmX))
    assert abs(cr.gap) < 1e-9


def test_two_level_shannon_deficit(rng):
    tl = two_level_model(np.eye(2) / 2, np.eye(2) / 2)
    r = random_density_matrix(2, rng)
    bal = shannon_balance(r, tl.inst, tl.povmX)
    assert abs(bal.deficit + math.log(2)) < 1e-12
    # p~(x, y) factorizes, so the coarse-graining joint is the only source of I(X:Y)
    joint = joint_successive_distribution(r, tl.inst, tl.povmX)
    assert abs(mutual_information(joint)) < 1e-15


def test_homodyne_shannon_deficit():
    spec = HilbertSpec.fock(20)
    hom = homodyne_model(1.0, 1.0, spec)
    k = hom.analytic.kernel(hom.povmX.grid.labels, hom.inst.grid.labels)
    bal = shannon_balance(coherent_state(0.7, spec), hom.inst, hom.povmX, kernel=k)
    assert abs(bal.deficit + 0.5) < 2e-2


def test_heterodyne_pair_within_grid_tolerance():
    spec = HilbertSpec.fock(20)
    het = heterodyne_model(1.0, 1.0, spec)
    rep = conservation_report(coherent_state(1.0, spec), coherent_state(0.5, spec), het.inst, het.povmX)
    assert abs(rep.residual) < 1e-3


def test_continuous_shannon_refinement_stable():
    # halving the x step changes the differential entropy only at quadrature order
    vals = []
    for step in (0.2, 0.1):
        g = OutcomeGrid.uniform(-12, 12, step)
        vals.append(shannon_entropy(Distribution(g, np.exp(-g.labels**2 / 2) / math.sqrt(2 * math.pi))))
    assert abs(vals[0] - vals[1]) < 4 * 0.2**2
