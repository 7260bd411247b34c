"""Homodyne: conservation residual and Shannon deficit under grid refinement.

The default grids are coarsened by step factors 16, 8, 4, 2, 1; the residual
should fall by at least 3x per halving and the deficit approach -gamma*t/2.
"""

import argparse

from qmeas import config as cfgmod
from qmeas import pipeline


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--N", type=int, default=20)
    ap.add_argument("--gamma-t", type=float, default=1.0)
    args = ap.parse_args()

    states = {s.name: s for s in cfgmod.default_config("homodyne").states}
    prev = None
    print("step_factor  n_y    n_x    residual     ratio    deficit")
    for factor in (16.0, 8.0, 4.0, 2.0, 1.0):
        params = dict(cfgmod.MODEL_PARAMS["homodyne"], gamma_t=args.gamma_t, N=args.N, step_factor=factor)
        ev = pipeline.build_evaluator("homodyne", params)
        rho = pipeline.build_state(states["rand0"], ev.dim, ev.state_dim)
        sigma = pipeline.build_state(states["rand1"], ev.dim, ev.state_dim)
        rep, bal, _ = ev.pair(rho, sigma)
        ratio = "" if prev is None else f"{prev / max(abs(rep.residual), 1e-300):.1f}"
        prev = abs(rep.residual)
        print(f"{factor:<12g} {len(ev.bundle.inst.grid):<6d} {len(ev.bundle.povmX.grid):<6d} "
              f"{rep.residual:+.3e}   {ratio:<8s} {bal.deficit:+.6f}")


if __name__ == "__main__":
    main()
