"""Distance of a BL run from its Boltzmann state over time (sup norm of rho - rho*)."""

import argparse

import numpy as np

from npns_lab.grid import BoundaryData, build_grid, integrate
from npns_lab.npns import BoundarySpec, ModelParams, init_state, simulate
from npns_lab.pb import PBVariant, pb_solve


def main(eps: float, cells: int, t_end: float):
    grid = build_grid(1, 1.0, cells)
    x = grid.centers(0)
    W = {"left": 1.0, "right": -1.0}
    c1 = 1 + 0.3 * np.cos(2 * np.pi * x)
    c2 = 0.8 + 0.4 * x**2
    c2 *= integrate(grid, c1) / integrate(grid, c2)
    params = ModelParams(eps=eps, d1=1.0, d2=1.0, nu=1.0, kcoup=1.0)
    bc = BoundarySpec.build(grid, "BL", W)
    star = pb_solve(PBVariant.bl(integrate(grid, c1)), eps, BoundaryData.dirichlet(grid, W), grid, 1e-12)
    print("t,sup_rho_minus_rho_star")
    cb_times = []

    def report(state):
        if not cb_times or state.t >= cb_times[-1] + 0.5 - 1e-12:
            cb_times.append(state.t)
            print(f"{state.t:.6g},{np.max(np.abs(state.c1 - state.c2 - star.rho)):.3e}", flush=True)

    simulate(init_state(grid, c1, c2, params, bc), params, bc, t_end, 5e-3, 0.5, callback=report)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, default=1e-2)
    ap.add_argument("--cells", type=int, default=64)
    ap.add_argument("--t-end", type=float, default=10.0)
    args = ap.parse_args()
    main(args.eps, args.cells, args.t_end)
