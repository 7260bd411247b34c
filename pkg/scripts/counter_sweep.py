"""Quantum counter: conservation terms and Shannon deficit against gamma*t.

Prints one row per gamma*t for a seeded Hilbert-Schmidt state pair, for both
the number observable and the Poisson-kernel observable X.
"""

import argparse

import numpy as np

from qmeas.errors import ParameterRangeError
from qmeas.hilbert import HilbertSpec, random_density_matrix
from qmeas.models import (
    counter_conditional_gap,
    counter_number_report,
    counter_x_analysis,
    default_counter_x_grid,
    quantum_counter_model,
)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--gamma-t", type=float, nargs="+", default=[0.5, 1, 2, 4, 8])
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = HilbertSpec.fock(args.N)
    grid = default_counter_x_grid()
    rng = np.random.default_rng(args.seed)
    k = max(args.N - 3, 1)
    rho, sigma = (np.pad(random_density_matrix(k, rng), (0, spec.dim - k)) for _ in range(2))

    print("gamma_t  M_max  residual_N  residual_X  E[D_post^N]  E[D_post^X]  gap        deficit_X")
    for gt in args.gamma_t:
        m = quantum_counter_model(1.0, gt, spec, grid, dense=False)
        rn = counter_number_report(gt, rho, sigma, m.m_max)
        try:
            rx, bal = counter_x_analysis(m, rho, sigma, shannon=True)
            deficit = f"{bal.deficit:+.5f}"
        except ParameterRangeError:
            rx, _ = counter_x_analysis(m, rho, sigma, shannon=False)
            deficit = "n/a"
        gap = counter_conditional_gap(m, rho, sigma)
        print(f"{gt:<8g} {m.m_max:<6d} {rn.residual:+.2e}   {rx.residual:+.2e}   {rn.d_post_avg:.6f}     "
              f"{rx.d_post_avg:.3e}    {gap:.6f}   {deficit}")


if __name__ == "__main__":
    main()
