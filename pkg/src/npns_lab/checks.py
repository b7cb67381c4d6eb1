"""Fast invariant suite over every module, driven by a seed.

Each check returns a :class:`CheckResult`; ``run_checks`` collects them and
never raises for a failing property (exceptions are recorded as failures).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import diagnostics as dg
from . import npns, pb
from .elliptic import LinearEllipticProblem, solve_elliptic, solve_poisson
from .grid import BoundaryData, bernoulli, build_grid, divergence, gradient, integrate, laplacian, sg_flux


@dataclass(frozen=True)
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.module}.{self.name}: {self.detail}"


def _result(module: str, name: str, value: float, bound: float, what: str = "value") -> CheckResult:
    ok = bool(value <= bound)
    return CheckResult(module, name, ok, f"{what} {value:.3e} (bound {bound:.1e})")


# ---------------------------------------------------------------------------
# grid


def check_quadratic_laplacian(rng) -> CheckResult:
    g = build_grid(2, (1.0, 1.5), (12, 16))
    X, Y = g.mesh()
    lap = laplacian(X**2 + Y**2, BoundaryData.dirichlet(g, lambda x, y: x**2 + y**2))
    err = float(np.max(np.abs(lap[1:-1, 1:-1] - 4.0)))
    return _result("grid", "quadratic_laplacian", err, 1e-9, "max error")


def check_summation_by_parts(rng) -> CheckResult:
    g = build_grid(2, (1.0, 1.0), (10, 14))
    f, u = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    lhs = integrate(g, f * laplacian(u, BoundaryData.neumann(g)))
    rhs = -sum(float(np.sum(a * b)) for a, b in zip(gradient(f, g), gradient(u, g))) * g.cell_volume
    return _result("grid", "summation_by_parts", abs(lhs - rhs), 1e-9 * (1 + abs(lhs)), "mismatch")


def check_div_grad(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (20,))
    u = rng.standard_normal(g.shape)
    err = float(np.max(np.abs(divergence(gradient(u, g), g) - laplacian(u, BoundaryData.neumann(g)))))
    return _result("grid", "div_grad_is_neumann_laplacian", err, 1e-9, "max difference")


def check_sg_boltzmann(rng) -> CheckResult:
    x = np.linspace(0, 1, 41)
    phi = rng.uniform(-3, 3) * np.sin(3 * x) + rng.uniform(-1, 1)
    worst = 0.0
    for z in (1, -1):
        c = np.exp(-z * phi) * rng.uniform(0.5, 2)
        f = sg_flux(c[:-1], c[1:], phi[:-1], phi[1:], z, 1.3, x[1] - x[0])
        worst = max(worst, float(np.max(np.abs(f)) / np.max(c)))
    return _result("grid", "sg_exact_on_boltzmann", worst, 1e-11, "relative flux")


def check_bernoulli_continuity(rng) -> CheckResult:
    t = np.array([-1.0000001e-5, -0.9999999e-5, 0.0, 0.9999999e-5, 1.0000001e-5])
    b = bernoulli(t)
    exact = np.array([1.0 - s / 2 + s * s / 12 for s in t])
    return _result("grid", "bernoulli_series_switch", float(np.max(np.abs(b - exact))), 1e-12, "max error")


# ---------------------------------------------------------------------------
# elliptic


def check_poisson_order(rng) -> CheckResult:
    errs = []
    for n in (32, 64):
        g = build_grid(1, (1.0,), (n,))
        x = g.centers(0)
        exact = np.sin(np.pi * x) + x
        phi = solve_poisson(0.5, 0.5 * np.pi**2 * np.sin(np.pi * x), BoundaryData.dirichlet(g, {"left": 0.0, "right": 1.0}))
        errs.append(float(np.max(np.abs(phi - exact))))
    ratio = errs[0] / errs[1]
    return CheckResult("elliptic", "poisson_second_order", 3.6 < ratio < 4.4, f"error ratio {ratio:.3f}")


def check_elliptic_2d_residual(rng) -> CheckResult:
    g = build_grid(2, (1.0, 1.0), (20, 24))
    react = rng.uniform(0, 2, g.shape)
    kinds = {"left": "dirichlet", "right": "flux", "bottom": "dirichlet", "top": "flux"}
    bc = BoundaryData(g, kinds, {"left": 1.0, "right": 0.5, "bottom": -1.0, "top": 0.0})
    prob = LinearEllipticProblem(g, 0.7, react, rng.standard_normal(g.shape), bc)
    u, rep = solve_elliptic(prob, 1e-10)
    return CheckResult("elliptic", "pcg_residual", rep.converged, f"residual {rep.residual:.3e} in {rep.iterations} iterations")


# ---------------------------------------------------------------------------
# pb


def check_pb_trivial(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (64,))
    w = rng.uniform(-1, 1)
    a = pb.pb_solve(pb.PBVariant.us2(1.0, 1.0), 0.1, BoundaryData.dirichlet(g, 0.0), g)
    b = pb.pb_solve(pb.PBVariant.bl(rng.uniform(0.5, 2)), 0.1, BoundaryData.dirichlet(g, w), g)
    worst = max(float(np.max(np.abs(a.rho))), float(np.max(np.abs(b.rho))))
    return _result("pb", "trivial_equilibria", worst, 1e-11, "max |rho|")


def check_pb_gradient(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (24,))
    W = BoundaryData.dirichlet(g, {"left": 1.0, "right": -0.5})
    var = pb.PBVariant.bl(1.2)
    psi = 0.3 * rng.standard_normal(g.shape)
    eps = 0.05
    res = pb.pb_residual(var, eps, psi, W) * g.cell_volume
    v = rng.standard_normal(g.shape)
    s = 1e-6
    fd = (pb.pb_energy(var, eps, psi + s * v, W) - pb.pb_energy(var, eps, psi - s * v, W)) / (2 * s)
    err = abs(fd - float(np.sum(res * v)))
    return _result("pb", "energy_gradient_matches_residual", err, 1e-6 * (1 + abs(fd)), "mismatch")


def check_pb_bounds(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (64,))
    wl, wr = rng.uniform(-2, 2, 2)
    sol = pb.pb_solve(pb.PBVariant.bl(1.0), 0.01, BoundaryData.dirichlet(g, {"left": wl, "right": wr}), g)
    lo, hi = min(wl, wr), max(wl, wr)
    viol = max(lo - float(sol.phi.min()), float(sol.phi.max()) - hi, 0.0)
    return _result("pb", "potential_within_boundary_range", viol, 1e-8, "violation")


def check_pb_boltzmann_potentials(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (48,))
    z1, z2 = rng.uniform(0.5, 2, 2)
    sol = pb.pb_solve(pb.PBVariant.us2(z1, z2), 0.05, BoundaryData.dirichlet(g, lambda x: np.sin(3 * x)), g)
    mu1, mu2 = dg.electrochemical_potentials(sol)
    err = max(float(np.max(np.abs(mu1 + math.log(z1)))), float(np.max(np.abs(mu2 + math.log(z2)))))
    return _result("pb", "constant_electrochemical_potentials", err, 1e-12, "max deviation")


# ---------------------------------------------------------------------------
# npns


def _random_profile(rng, x, base=1.0):
    a, b = rng.uniform(-0.4, 0.4, 2)
    k = rng.integers(1, 4)
    return base + a * np.cos(k * np.pi * x) + b * np.sin(np.pi * x)


def check_equilibrium_fixed_point(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (48,))
    w = {"left": rng.uniform(-1, 1), "right": rng.uniform(-1, 1)}
    sol = pb.pb_solve(pb.PBVariant.bl(1.0), 0.05, BoundaryData.dirichlet(g, w), g)
    params = npns.ModelParams(0.05)
    bc = npns.BoundarySpec.build(g, "BL", w)
    s0 = npns.init_state(g, sol.c1, sol.c2, params, bc)
    s1 = npns.np_step(s0, params, bc, 1e-3)
    err = max(float(np.max(np.abs(s1.c1 - s0.c1))), float(np.max(np.abs(s1.c2 - s0.c2))))
    return _result("npns", "equilibrium_is_fixed_point", err, 1e-11, "max change")


def check_bl_conservation(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (32,))
    x = g.centers(0)
    params = npns.ModelParams(0.1, 1.0, rng.uniform(0.5, 2))
    bc = npns.BoundarySpec.build(g, "BL", {"left": 1.0, "right": -1.0})
    s = npns.init_state(g, _random_profile(rng, x), _random_profile(rng, x), params, bc)
    tr = npns.simulate(s, params, bc, 0.1, 2e-3, 0.05)
    m1 = [r.mass1 for r in tr.records]
    m2 = [r.mass2 for r in tr.records]
    drift = max(np.ptp(m1) / m1[0], np.ptp(m2) / m2[0])
    ok = drift <= 1e-10 and tr.min_c >= -npns.NEG_TOL and not tr.failed
    return CheckResult("npns", "bl_conservation_positivity", ok, f"relative drift {drift:.3e}, min c {tr.min_c:.3e}")


def check_mirror(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (32,))
    x = g.centers(0)
    params = npns.ModelParams(0.1)
    gam1, gam2 = rng.uniform(0.5, 2, 2)
    w = {"left": 0.5, "right": -0.2}
    bc = npns.BoundarySpec.build(g, "DI", w, gam1, gam2)
    c1, c2 = _random_profile(rng, x), _random_profile(rng, x)
    a = npns.simulate(npns.init_state(g, c1, c2, params, bc), params, bc, 0.05, 2e-3, 0.05).final_state
    mb = bc.mirrored()
    b = npns.simulate(npns.init_state(g, c2, c1, params, mb), params, mb, 0.05, 2e-3, 0.05).final_state
    err = max(float(np.max(np.abs(a.c1 - b.c2))), float(np.max(np.abs(a.c2 - b.c1))), float(np.max(np.abs(a.phi + b.phi))))
    return _result("npns", "species_mirror_symmetry", err, 1e-10, "max mismatch")


def check_en_invariant(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (32,))
    x = g.centers(0)
    params = npns.ModelParams(0.1, 1.0, 3.0)
    bc = npns.BoundarySpec.build(g, "EN", {"left": 0.3, "right": -0.3})
    s = npns.init_state(g, _random_profile(rng, x), _random_profile(rng, x), params, bc)
    tr = npns.simulate(s, params, bc, 0.05, 1e-3, 0.01)
    li = np.array([r.lininv for r in tr.records])
    q = np.array([r.q for r in tr.records])
    drift = float(np.ptp(li) / abs(li[0]))
    rise = float(np.max(np.diff(q)))
    ok = drift <= 1e-10 and rise <= 1e-10
    return CheckResult("npns", "en_ledger", ok, f"invariant drift {drift:.3e}, max Q increase {rise:.3e}")


def check_projection(rng) -> CheckResult:
    g = build_grid(2, (1.0, 1.0), (12, 12))
    u = npns.streamfunction_velocity(g, rng.standard_normal((13, 13)))
    params = npns.ModelParams(0.1)
    s = npns.SimState(g, 0.0, np.ones(g.shape), np.ones(g.shape), np.zeros(g.shape), u, np.zeros(g.shape))
    ke = [dg.kinetic_energy(s)]
    div = 0.0
    for _ in range(5):
        s = npns.fluid_step(s, params, 1e-3, npns.FluidMode.NAVIER_STOKES)
        ke.append(dg.kinetic_energy(s))
        div = max(div, float(np.max(np.abs(divergence(s.u, g)))))
    ok = div <= 1e-10 and all(b < a for a, b in zip(ke, ke[1:]))
    return CheckResult("npns", "projection_dissipation", ok, f"max divergence {div:.3e}, kinetic energy {ke[0]:.3e} -> {ke[-1]:.3e}")


# ---------------------------------------------------------------------------
# diagnostics


def check_decay_fit(rng) -> CheckResult:
    lam, C = rng.uniform(0.1, 5), rng.uniform(0.1, 10)
    t = np.linspace(0, 2, 41)
    fit = dg.decay_fit(t, C * np.exp(-lam * t))
    err = max(abs(fit.rate - lam) / lam, abs(fit.prefactor - C) / C)
    return _result("diagnostics", "decay_fit_exact", err, 1e-10, "relative error")


def check_holder_chain(rng) -> CheckResult:
    g = build_grid(2, (1.0, 2.0), (10, 12))
    s = npns.SimState(g, 0.0, rng.uniform(0, 2, g.shape), rng.uniform(0, 2, g.shape), np.zeros(g.shape))
    r = dg.record(s, npns.ModelParams(0.1), "BL", 0.25)
    vol = g.measure
    ok = r.rho_l1 <= r.rho_l2 * math.sqrt(vol) * (1 + 1e-12) and r.rho_l2 * math.sqrt(vol) <= r.rho_linf * vol * (1 + 1e-12)
    return CheckResult("diagnostics", "holder_chain", ok, f"{r.rho_l1:.4g} <= {r.rho_l2 * math.sqrt(vol):.4g} <= {r.rho_linf * vol:.4g}")


def check_interior_sup_monotone(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (40,))
    f = rng.standard_normal(g.shape)
    vals = [dg.interior_sup(g, f, m) for m in (0.05, 0.15, 0.25, 0.35, 0.45)]
    ok = all(b <= a for a, b in zip(vals, vals[1:]))
    return CheckResult("diagnostics", "interior_sup_monotone", ok, "sup over margins " + ", ".join(f"{v:.3f}" for v in vals))


def check_q_above_p(rng) -> CheckResult:
    g = build_grid(1, (1.0,), (40,))
    s = npns.SimState(g, 0.0, rng.uniform(0, 2, g.shape), rng.uniform(0, 2, g.shape), np.zeros(g.shape))
    led = dg.en_quadratic_monitor(s, npns.ModelParams(0.1, rng.uniform(0.2, 1), rng.uniform(1, 5)))
    ok = led.q >= led.p >= 0 and led.q1 >= 0 and led.r >= 0
    return CheckResult("diagnostics", "q_above_p", ok, f"Q {led.q:.4g}, P {led.p:.4g}")


CHECKS: tuple[tuple[str, Callable], ...] = (
    ("grid", check_quadratic_laplacian),
    ("grid", check_summation_by_parts),
    ("grid", check_div_grad),
    ("grid", check_sg_boltzmann),
    ("grid", check_bernoulli_continuity),
    ("elliptic", check_poisson_order),
    ("elliptic", check_elliptic_2d_residual),
    ("pb", check_pb_trivial),
    ("pb", check_pb_gradient),
    ("pb", check_pb_bounds),
    ("pb", check_pb_boltzmann_potentials),
    ("npns", check_equilibrium_fixed_point),
    ("npns", check_bl_conservation),
    ("npns", check_mirror),
    ("npns", check_en_invariant),
    ("npns", check_projection),
    ("diagnostics", check_decay_fit),
    ("diagnostics", check_holder_chain),
    ("diagnostics", check_interior_sup_monotone),
    ("diagnostics", check_q_above_p),
)


def run_checks(seed: int = 0) -> list[CheckResult]:
    out = []
    for k, (module, fn) in enumerate(CHECKS):
        rng = np.random.default_rng([seed, k])
        try:
            out.append(fn(rng))
        except Exception as exc:  # a crash counts as a violated invariant
            out.append(CheckResult(module, fn.__name__.removeprefix("check_"), False, f"raised {type(exc).__name__}: {exc}"))
    return out
