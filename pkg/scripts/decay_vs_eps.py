"""Fitted EN decay rate of the charge against eps, beside the linearized rate pi^2 + 2/eps."""

import argparse
import math

import numpy as np

from npns_lab import diagnostics as dg
from npns_lab.grid import build_grid
from npns_lab.npns import BoundarySpec, ModelParams, init_state, simulate


def fitted_rate(eps: float, cells: int, amplitude: float = 0.01) -> float:
    grid = build_grid(1, 1.0, cells)
    x = grid.centers(0)
    params = ModelParams(eps=eps, d1=1.0, d2=1.0, nu=1.0, kcoup=1.0)
    bc = BoundarySpec.build(grid, "EN", 0.0)
    state = init_state(grid, 1 + amplitude * np.sin(np.pi * x), 1 - amplitude * np.sin(np.pi * x), params, bc)
    # keep the horizon at a fixed number of e-folds of the expected rate
    lam = math.pi**2 + 2.0 / eps
    t_end = 15.0 / lam
    traj = simulate(state, params, bc, t_end, min(5e-4, t_end / 1000), t_end / 50)
    fit = dg.decay_fit([r.t for r in traj.records], [r.rho_l2 for r in traj.records])
    return fit.rate


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[1.0, 0.3, 0.1, 0.05])
    ap.add_argument("--cells", type=int, default=128)
    args = ap.parse_args()
    print("eps,fitted_rate,linearized_rate")
    for eps in args.eps:
        print(f"{eps!r},{fitted_rate(eps, args.cells):.6g},{math.pi**2 + 2.0 / eps:.6g}")
