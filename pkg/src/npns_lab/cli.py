"""Command-line experiment drivers.

Every run writes ``manifest.json`` into the output directory before any
result file, then the CSV tables (and SVG plots) of the chosen subcommand.
The manifest is rewritten at the end with the list of outputs and status.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, checks, config, npns, pb
from . import diagnostics as dg
from .grid import BoundaryData
from .io import read_columns, write_rows
from .svg import Axes, Series, emit_svg

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("pb-solve", "simulate", "sweep", "decay-study", "check", "plot")
OUT_ENV = "NPNS_LAB_OUT"


class RunFailed(RuntimeError):
    pass


class Run:
    """Output directory plus manifest bookkeeping for one invocation."""

    def __init__(self, out: Path, command: str, cfg: config.ExperimentConfig | None, manifest: str = "manifest.json"):
        self.out = out
        self.manifest_name = manifest
        self.out.mkdir(parents=True, exist_ok=True)
        self.manifest = {
            "command": command,
            "version": __version__,
            "config": config.config_to_dict(cfg) if cfg is not None else None,
            "grid_hash": config.build_grid_from(cfg).fingerprint() if cfg is not None else None,
            "outputs": [],
            "status": "running",
            "message": "",
        }
        self._dump()

    def _dump(self):
        text = json.dumps(self.manifest, indent=2, sort_keys=True) + "\n"
        (self.out / self.manifest_name).write_text(text, encoding="utf-8", newline="\n")

    def write(self, name: str, text: str):
        (self.out / name).write_text(text, encoding="utf-8", newline="\n")
        self.manifest["outputs"].append(name)

    def finish(self, status: str, message: str = ""):
        self.manifest["status"] = status
        self.manifest["message"] = message
        self._dump()


# ---------------------------------------------------------------------------
# experiment drivers


def _initial_state(cfg, grid, params, bc):
    c1 = config.evaluate_field(grid, cfg.init.c1)
    c2 = config.evaluate_field(grid, cfg.init.c2)
    u = config.build_velocity(cfg, grid)
    return npns.init_state(grid, c1, c2, params, bc, u=u, fluid=npns.FluidMode(cfg.fluid.mode), require_equal_mass=cfg.init.equal_mass)


def run_pb_solve(cfg, run: Run, workers: int = 1):
    grid = config.build_grid_from(cfg)
    variant = config.build_variant(cfg, grid)
    W = BoundaryData.dirichlet(grid, config.spatial_value(cfg.bc.w))
    sol = pb.pb_solve(variant, cfg.params.epsilon, W, grid, cfg.experiment.tol)
    entry = pb.SweepEntry(
        cfg.params.epsilon,
        dg.interior_sup(grid, sol.rho, cfg.experiment.margin),
        sol.energy,
        pb.center_value(grid, sol.phi),
        sol.iterations,
        sol.converged,
    )
    run.write("pb_solve.csv", pb.SweepReport(variant, cfg.experiment.margin, [entry]).to_csv())
    coords = grid.mesh()
    names = ["x", "y"][: grid.dim] + ["phi", "rho", "c1", "c2"]
    cols = [c.ravel() for c in coords] + [sol.phi.ravel(), sol.rho.ravel(), sol.c1.ravel(), sol.c2.ravel()]
    run.write("pb_profile.csv", write_rows(names, ([float(v) for v in row] for row in zip(*cols))))
    if grid.dim == 1:
        run.write("pb_profile.svg", emit_svg([Series("phi", coords[0], sol.phi), Series("rho", coords[0], sol.rho)], Axes("equilibrium", "x", "value")))
    if not sol.converged:
        raise RunFailed(f"Poisson-Boltzmann solve did not converge: {sol.message}")


def run_sweep(cfg, run: Run, workers: int = 1):
    grid = config.build_grid_from(cfg)
    variant = config.build_variant(cfg, grid)
    policy = pb.GridPolicy(cfg.domain.extents, cfg.domain.cells, cfg.experiment.refine)
    report = pb.epsilon_sweep(variant, config.spatial_value(cfg.bc.w), policy, cfg.experiment.eps_list, cfg.experiment.margin, cfg.experiment.tol, workers)
    run.write("sweep.csv", report.to_csv())
    run.write("sweep.svg", _sweep_svg(report.column("eps"), report.column("interior_sup_rho")))
    bad = [e.eps for e in report.entries if not e.converged]
    if bad:
        raise RunFailed(f"sweep entries failed to converge at eps = {bad}")


def _sweep_svg(eps, sup) -> str:
    return emit_svg([Series("interior sup |rho|", eps, sup)], Axes("interior charge vs eps", "eps", "interior sup |rho|", logx=True, logy=True))


def _simulate(cfg, run: Run):
    grid = config.build_grid_from(cfg)
    params = config.build_params(cfg)
    bc = config.build_boundary(cfg, grid)
    state = _initial_state(cfg, grid, params, bc)
    t = cfg.time
    traj = npns.simulate(state, params, bc, t.t_end, t.dt_max, t.output_every, npns.FluidMode(cfg.fluid.mode), cfg.experiment.margin)
    run.write("trajectory.csv", dg.records_to_csv(traj.records))
    return traj, params, bc


def run_simulate(cfg, run: Run, workers: int = 1):
    traj, _, _ = _simulate(cfg, run)
    times = [r.t for r in traj.records]
    run.write("rho_norms.svg", emit_svg(
        [Series("L2", times, [r.rho_l2 for r in traj.records]), Series("interior sup", times, [r.rho_intsup for r in traj.records])],
        Axes("charge density", "t", "norm of rho", logy=True),
    ))
    if traj.failed:
        raise RunFailed(f"simulation stopped early: {traj.message}")


def linearized_rate(cfg) -> float:
    """Slowest decay rate of the linearized EN charge equation (equal diffusivities only)."""
    p = cfg.params
    if p.d1 != p.d2:
        return float("nan")
    grid = config.build_grid_from(cfg)
    sigma = config.evaluate_field(grid, cfg.init.c1) + config.evaluate_field(grid, cfg.init.c2)
    sigma_bar = float(np.mean(sigma))
    lam1 = sum((math.pi / L) ** 2 for L in cfg.domain.extents)
    return p.d1 * (lam1 + sigma_bar / p.epsilon)


DECAY_COLUMNS = ("rate", "prefactor", "t0", "t1", "residual", "points", "linearized_rate")


def run_decay_study(cfg, run: Run, workers: int = 1):
    traj, _, _ = _simulate(cfg, run)
    times = [r.t for r in traj.records]
    norms = [r.rho_l2 for r in traj.records]
    fit = dg.decay_fit(times, norms, cfg.experiment.fit_window)
    row = [fit.rate, fit.prefactor, fit.t0, fit.t1, fit.residual, fit.points, linearized_rate(cfg)]
    run.write("decay_fit.csv", write_rows(DECAY_COLUMNS, [row]))
    fitted = [fit.prefactor * math.exp(-fit.rate * t) for t in times]
    run.write("decay.svg", emit_svg([Series("|rho|_L2", times, norms), Series("fit", times, fitted)], Axes("decay of the charge", "t", "|rho|_L2", logy=True)))
    if traj.failed:
        raise RunFailed(f"simulation stopped early: {traj.message}")


def run_plot(out: Path, run: Run):
    """Re-render plots from CSVs already present in the output directory."""
    made = False
    sweep = out / "sweep.csv"
    if sweep.exists():
        cols = read_columns(sweep.read_text(encoding="utf-8"))
        run.write("sweep.svg", _sweep_svg([float(v) for v in cols["eps"]], [float(v) for v in cols["interior_sup_rho"]]))
        made = True
    traj = out / "trajectory.csv"
    if traj.exists():
        cols = read_columns(traj.read_text(encoding="utf-8"))
        t = [float(v) for v in cols["t"]]
        series = [Series(name, t, [float(v) for v in cols[name]]) for name in ("rho_l2", "rho_linf", "rho_intsup")]
        run.write("trajectory.svg", emit_svg(series, Axes("charge density norms", "t", "norm", logy=True)))
        made = True
    if not made:
        raise RunFailed(f"nothing to plot in {out} (no sweep.csv or trajectory.csv)")


DRIVERS = {
    "pb-solve": run_pb_solve,
    "sweep": run_sweep,
    "simulate": run_simulate,
    "decay-study": run_decay_study,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="npns-lab", description="Electrodiffusion experiments: equilibria, sweeps, time runs and checks.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, required=name not in ("check", "plot"), help="TOML experiment file")
        sp.add_argument("--out", type=Path, default=Path("out"), help=f"output directory (overridden by ${OUT_ENV})")
        sp.add_argument("--workers", type=int, default=1, help="process pool size for sweeps")
        sp.add_argument("--seed", type=int, default=0, help="seed for the randomized invariant checks")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    out = Path(os.environ[OUT_ENV]) if os.environ.get(OUT_ENV) else args.out
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 2

    if args.command == "check":
        results = checks.run_checks(args.seed)
        for r in results:
            print(r.line())
        failed = sum(not r.passed for r in results)
        print(f"{len(results) - failed}/{len(results)} invariants hold")
        return 1 if failed else 0

    cfg = None
    if args.config is not None:
        try:
            cfg = config.parse_config(args.config.read_text(encoding="utf-8"))
        except (OSError, config.ConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
    if cfg is not None and args.command in DRIVERS and cfg.experiment.kind != args.command:
        logger.info("config declares kind %s; running %s", cfg.experiment.kind, args.command)

    # plots re-read an earlier run's directory, so keep its manifest intact
    run = Run(out, args.command, cfg, "plot_manifest.json" if args.command == "plot" else "manifest.json")
    try:
        if args.command == "plot":
            run_plot(out, run)
        else:
            DRIVERS[args.command](cfg, run, args.workers)
    except (RunFailed, ValueError, ArithmeticError, RuntimeError) as exc:
        run.finish("failed", str(exc))
        print(f"error: {exc}", file=sys.stderr)
        return 1
    run.finish("ok")
    print(f"wrote {', '.join(run.manifest['outputs'])} to {out}")
    return 0
