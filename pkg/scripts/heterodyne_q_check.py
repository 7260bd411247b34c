"""Heterodyne: long-time outcome density against the Husimi Q function.

For a coherent input the Lebesgue outcome density at large gamma*t should
equal Q(y*) = exp(-|y* - alpha|^2) / pi on the grid.
"""

import argparse

import numpy as np

from qmeas.hilbert import HilbertSpec, coherent_state
from qmeas.measurement import instrument_distribution
from qmeas.models import heterodyne_model, square_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=16)
    ap.add_argument("--alpha", type=float, default=0.8)
    ap.add_argument("--gamma-t", type=float, nargs="+", default=[1, 5, 10, 20])
    args = ap.parse_args()

    spec = HilbertSpec.fock(args.N)
    grid = square_grid(4.0, 41)
    rho = coherent_state(args.alpha, spec)
    q = np.exp(-np.abs(np.conj(grid.labels) - args.alpha) ** 2) / np.pi
    print("gamma_t  max|density - Q|")
    for gt in args.gamma_t:
        het = heterodyne_model(1.0, gt, spec, grid)
        py = instrument_distribution(rho, het.inst)
        leb = py.density * het.inst.grid.weights / het.povmX.grid.weights
        print(f"{gt:<8g} {np.abs(leb - q).max():.3e}")


if __name__ == "__main__":
    main()
