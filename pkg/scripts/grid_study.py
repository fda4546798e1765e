"""Grid refinement of the equilibrium and of the two integration schemes."""
import argparse

import numpy as np

from liqgame import CostParams, ExpMixture, build_grid, solve, solve_A
from liqgame.equilibrium import solve_backward_picard


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mode", default="trading")
    ap.add_argument("--sizes", default="251,501,1001,2001,4001")
    args = ap.parse_args()

    params, dist = CostParams(), ExpMixture()
    print(f"{'n':>6} {'theta':>18} {'c':>18} {'mass err':>10} {'picard gap':>10}")
    for n in (int(v) for v in args.sizes.split(",")):
        bundle = solve_A(params, build_grid(params.T, n))
        sol = solve(params, dist, args.mode, bundle=bundle)
        pic = solve_backward_picard(sol.theta, sol.c, bundle, params, sol.dist, sol.mode)
        gap = np.max(np.abs(pic - sol.mu)) / np.max(np.abs(sol.mu))
        print(f"{n:6d} {sol.theta:18.14f} {sol.c:18.14f} "
              f"{sol.residuals['mass_error']:10.2e} {gap:10.2e}")


if __name__ == "__main__":
    main()
