"""Acceptance criteria 1-12, one test each.

Every test prints a single ``[criterion k] PASS|FAIL ...`` line (visible even
without ``-s``) before asserting, so the suite output doubles as a report.
"""

from __future__ import annotations

import math
import time

import numpy as np
import pytest

from npns_lab import cli, npns, pb
from npns_lab import diagnostics as dg
from npns_lab.grid import BoundaryData, build_grid, integrate

EPS_LIST = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
MARGIN = 0.25
BL_W = {"left": 1.0, "right": -1.0}


@pytest.fixture
def report(capsys):
    def emit(k: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[criterion {k}] {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


def _sweep(variant, w, length):
    policy = pb.GridPolicy((length,), (64,), refine=True)
    t0 = time.perf_counter()
    rep, sols = pb.epsilon_sweep(variant, w, policy, EPS_LIST, MARGIN, keep_solutions=True)
    return rep, sols, time.perf_counter() - t0


@pytest.fixture(scope="module")
def sweeps():
    out = {
        "us2": _sweep(pb.PBVariant.us2(1.0, 1.0), 1.0, 1.0),
        "bl": _sweep(pb.PBVariant.bl(1.0), BL_W, 1.0),
        "bl_long": _sweep(pb.PBVariant.bl(1.0), BL_W, 2.0),
    }
    return out


@pytest.fixture(scope="module")
def trivial_solutions():
    g = build_grid(1, (1.0,), (256,))
    out = []
    for eps in (1.0, 1e-2):
        for variant, w in ((pb.PBVariant.us2(1.0, 1.0), 0.0), (pb.PBVariant.bl(1.0), 0.7)):
            t0 = time.perf_counter()
            sol = pb.pb_solve(variant, eps, BoundaryData.dirichlet(g, w), g)
            out.append((sol, time.perf_counter() - t0))
    return out


def test_criterion_01_trivial_equilibria(trivial_solutions, report):
    worst = max(float(np.max(np.abs(s.rho))) for s, _ in trivial_solutions)
    slowest = max(t for _, t in trivial_solutions)
    ok = worst <= 1e-11 and slowest < 1.0 and all(s.converged for s, _ in trivial_solutions)
    assert report(1, ok, f"max |rho*| = {worst:.2e} (tol 1e-11), slowest solve {slowest:.3f} s (limit 1 s)")


def test_criterion_02_interior_electroneutrality(sweeps, report):
    lines = []
    ok = True
    total = 0.0
    for key in ("us2", "bl"):
        rep, sols, dt = sweeps[key]
        total += dt
        sup = rep.column("interior_sup_rho")
        resolved = all(max(s.grid.h) <= math.sqrt(s.eps) / 4 + 1e-15 for s in sols)
        dec = bool(np.all(np.diff(sup) < 0))
        last = float(sup[-1])
        ok &= dec and last <= 1e-3 and resolved and all(rep.column("converged"))
        lines.append(f"{key}: sup {', '.join(f'{v:.2e}' for v in sup)}")
    ok &= total < 30.0
    long_sup = sweeps["bl_long"][0].column("interior_sup_rho")
    extra = f"; BL on [0, 2] (energy check domain): {', '.join(f'{v:.2e}' for v in long_sup)}"
    assert report(2, ok, "; ".join(lines) + f"; need strictly decreasing and last <= 1e-3; {total:.1f} s (limit 30 s)" + extra)


def test_criterion_03_energy_limits(sweeps, report):
    rep_u, sols_u, _ = sweeps["us2"]
    target_u = pb.energy_limit(pb.PBVariant.us2(1.0, 1.0), sols_u[-1].grid)
    e_u = float(rep_u.column("energy")[-1])
    rel_u = abs(e_u - target_u) / abs(target_u)
    rep_b, sols_b, _ = sweeps["bl_long"]
    target_b = pb.energy_limit(pb.PBVariant.bl(1.0), sols_b[-1].grid)
    e_b = float(rep_b.column("energy")[-1])
    rel_b = abs(e_b - target_b) / abs(target_b)
    # on the unit interval the BL target is 0 and a relative band is undefined; report the absolute gap
    e_b1 = float(sweeps["bl"][0].column("energy")[-1])
    ok = rel_u <= 0.05 and rel_b <= 0.05
    assert report(
        3,
        ok,
        f"J = {e_u:.5f} vs G(Z)|Omega| = {target_u:.5f} ({100 * rel_u:.2f}%); "
        f"I = {e_b:.5f} vs 2 I0 log|Omega| = {target_b:.5f} on [0, 2] ({100 * rel_b:.2f}%), tol 5%; "
        f"unit-interval BL energy {e_b1:.5f} vs target 0",
    )


def test_criterion_04_potential_bounds(sweeps, report):
    worst = 0.0
    for key in ("bl", "bl_long"):
        for sol in sweeps[key][1]:
            lo, hi = -1.0, 1.0
            worst = max(worst, lo - float(sol.phi.min()), float(sol.phi.max()) - hi)
    ok = worst <= 1e-8
    assert report(4, ok, f"largest excursion outside [min W, max W] = {max(worst, 0.0):.2e} (tol 1e-8)")


def test_criterion_05_subharmonicity(sweeps, trivial_solutions, report):
    sols = [s for s, _ in trivial_solutions]
    for key in ("us2", "bl", "bl_long"):
        sols += sweeps[key][1]
    worst = math.inf
    ok = True
    for s in sols:
        if not s.converged:
            continue
        lap_min, scale = dg.square_subharmonicity(s.grid, s.rho)
        ok &= lap_min >= -1e-6 * scale
        if scale > 0:
            worst = min(worst, lap_min / scale)
    assert report(5, ok, f"{len(sols)} solves; min Lap(rho^2)/max rho^2 = {worst:.3e} (must be >= -1e-6)")


def _en_linear_run(eps: float, cells: int = 128, dt: float = 5e-4):
    g = build_grid(1, (1.0,), (cells,))
    x = g.centers(0)
    params = npns.ModelParams(eps)
    bc = npns.BoundarySpec.build(g, "EN", 0.0)
    s = npns.init_state(g, 1 + 0.01 * np.sin(np.pi * x), 1 - 0.01 * np.sin(np.pi * x), params, bc)
    tr = npns.simulate(s, params, bc, 0.5, dt, 0.01)
    fit = dg.decay_fit([r.t for r in tr.records], [r.rho_l2 for r in tr.records])
    return fit, tr


def test_criterion_06_en_decay(report):
    t0 = time.perf_counter()
    fit, tr = _en_linear_run(0.1)
    oracle = math.pi**2 + 2.0 / 0.1
    rel = abs(fit.rate - oracle) / oracle
    fit2, tr2 = _en_linear_run(0.05)
    elapsed = time.perf_counter() - t0
    ok = rel <= 0.05 and fit2.rate > fit.rate and not tr.failed and not tr2.failed and elapsed < 60
    assert report(
        6,
        ok,
        f"fitted rate {fit.rate:.3f} vs {oracle:.3f} ({100 * rel:.2f}%, tol 5%); "
        f"eps=0.05 rate {fit2.rate:.3f} (> {fit.rate:.3f}); {elapsed:.1f} s (limit 60 s)",
    )


def test_criterion_07_en_ledger(report):
    g = build_grid(1, (1.0,), (128,))
    x = g.centers(0)
    params = npns.ModelParams(0.1, 1.0, 3.0)
    bc = npns.BoundarySpec.build(g, "EN", {"left": 1.0, "right": -0.5})
    s = npns.init_state(g, 1 + 0.5 * np.sin(3 * x) ** 2, 1.2 + 0.3 * np.cos(5 * x), params, bc)
    qs = [dg.en_quadratic_monitor(s, params).q]
    inv = [dg.linear_invariant(s, params)]

    def track(state):
        qs.append(dg.en_quadratic_monitor(state, params).q)
        inv.append(dg.linear_invariant(state, params))

    tr = npns.simulate(s, params, bc, 0.5, 1e-3, 0.05, callback=track)
    rise = float(np.max(np.diff(qs)))
    drift = float(np.ptp(inv) / abs(inv[0]))
    ok = rise <= 1e-10 and drift <= 1e-10 and not tr.failed
    assert report(7, ok, f"{tr.steps} steps; max per-step increase of Q {rise:.2e} (tol 1e-10); invariant drift {drift:.2e} (tol 1e-10)")


def test_criterion_08_maximum_principles(report):
    g = build_grid(1, (1.0,), (128,))
    x = g.centers(0)
    params = npns.ModelParams(0.1)
    di = npns.BoundarySpec.build(g, "DI", BL_W, 1.0, 1.0)
    tr_di = npns.simulate(npns.init_state(g, np.full(g.shape, 2.0), np.full(g.shape, 2.0), params, di), params, di, 2.0, 1e-2, 0.1)
    rep_di = dg.max_principle_monitor(tr_di, di)
    en = npns.BoundarySpec.build(g, "EN", {"left": 2.0, "right": -2.0})
    c1 = 2.5 + 2.5 * np.sin(2 * np.pi * x) ** 2
    c2 = 1.0 + 4.0 * x
    tr_en = npns.simulate(npns.init_state(g, c1, c2, params, en), params, en, 2.0, 1e-2, 0.1)
    rep_en = dg.max_principle_monitor(tr_en, en)
    ok = rep_di.passed and rep_en.passed and rep_di.bound == 2.0 and not (tr_di.failed or tr_en.failed)
    assert report(
        8,
        ok,
        f"DI Gamma = {rep_di.bound:g}, worst ratio {rep_di.worst_ratio:.12f}; EN Gamma = {rep_en.bound:.6f}, worst ratio {rep_en.worst_ratio:.12f} (limit 1 + 1e-8)",
    )


def test_criterion_09_long_time_boltzmann(report):
    t0 = time.perf_counter()
    g = build_grid(1, (1.0,), (64,))
    x = g.centers(0)
    eps = 1e-2
    params = npns.ModelParams(eps)
    bc = npns.BoundarySpec.build(g, "BL", BL_W)
    c1 = 1 + 0.3 * np.cos(np.pi * x)
    c2 = 1 + 0.2 * np.sin(2 * np.pi * x)
    c2 *= integrate(g, c1) / integrate(g, c2)
    star = pb.pb_solve(pb.PBVariant.bl(integrate(g, c1)), eps, BoundaryData.dirichlet(g, BL_W), g)
    s = npns.init_state(g, c1, c2, params, bc, require_equal_mass=True)
    tr = npns.simulate(s, params, bc, 10.0, 5e-3, 0.5)
    err = float(np.max(np.abs(tr.final_state.c1 - tr.final_state.c2 - star.rho)))
    elapsed = time.perf_counter() - t0
    ok = err <= 1e-4 and not tr.failed and elapsed < 120
    assert report(9, ok, f"|rho(10) - rho*|_inf = {err:.2e} (tol 1e-4), {tr.steps} steps, {elapsed:.1f} s (limit 120 s)")


def test_criterion_10_conservation(report):
    g = build_grid(1, (1.0,), (32,))
    x = g.centers(0)
    params = npns.ModelParams(0.1)
    bl = npns.BoundarySpec.build(g, "BL", BL_W)
    s = npns.init_state(g, 1 + 0.3 * np.cos(np.pi * x), 1 + 0.2 * np.sin(np.pi * x), params, bl)
    tr = npns.simulate(s, params, bl, 1.0, 1e-4, 0.1)
    m1 = np.array([r.mass1 for r in tr.records])
    m2 = np.array([r.mass2 for r in tr.records])
    d_bl = max(np.ptp(m1) / m1[0], np.ptp(m2) / m2[0])

    w = {"left": 0.5, "right": -0.5}
    us = npns.BoundarySpec.build(g, "US", w, gamma1={"left": math.exp(-0.5), "right": math.exp(0.5)}, s1=("left", "right"))
    s = npns.init_state(g, 1 + 0.3 * np.cos(np.pi * x), 1 + 0.2 * np.sin(np.pi * x), params, us)
    tr_us = npns.simulate(s, params, us, 1.0, 1e-4, 0.1)
    m2u = np.array([r.mass2 for r in tr_us.records])
    d_us = np.ptp(m2u) / m2u[0]
    ok = d_bl <= 1e-10 and d_us <= 1e-10 and tr.steps >= 10_000 and tr_us.steps >= 10_000
    assert report(10, ok, f"BL mass drift {d_bl:.2e} over {tr.steps} steps; US blocked-species drift {d_us:.2e} over {tr_us.steps} steps (tol 1e-10)")


def _mirror_pair(grid, bc, c1, c2, params, t_end, dt, fluid="off", u=None):
    a = npns.simulate(npns.init_state(grid, c1, c2, params, bc, u=u, fluid=fluid), params, bc, t_end, dt, t_end / 4, fluid)
    mb = bc.mirrored()
    b = npns.simulate(npns.init_state(grid, c2, c1, params, mb, u=u, fluid=fluid), params, mb, t_end, dt, t_end / 4, fluid)
    sa, sb = a.final_state, b.final_state
    err = max(
        float(np.max(np.abs(sa.c1 - sb.c2))),
        float(np.max(np.abs(sa.c2 - sb.c1))),
        float(np.max(np.abs(sa.phi + sb.phi))),
    )
    if sa.u is not None:
        err = max(err, max(float(np.max(np.abs(ua - ub))) for ua, ub in zip(sa.u, sb.u)))
    return err


def test_criterion_11_mirror_symmetry(report):
    g = build_grid(1, (1.0,), (64,))
    x = g.centers(0)
    params = npns.ModelParams(0.05)
    c1, c2 = 1 + 0.3 * np.cos(np.pi * x), 1.5 + 0.2 * np.sin(3 * x)
    us = npns.BoundarySpec.build(g, "US", {"left": 0.4, "right": -0.3}, gamma1={"left": math.exp(-0.4), "right": math.exp(0.3)}, s1=("left", "right"))
    e_us = _mirror_pair(g, us, c1, c2, params, 0.2, 2e-3)
    di = npns.BoundarySpec.build(g, "DI", {"left": 0.4, "right": -0.3}, {"left": 1.5, "right": 0.5}, 0.8)
    e_di = _mirror_pair(g, di, c1, c2, params, 0.2, 2e-3)
    g2 = build_grid(2, (1.0, 1.0), (16, 16))
    X, Y = g2.mesh()
    bl2 = npns.BoundarySpec.build(g2, "BL", {"left": 1.0, "right": -1.0, "bottom": lambda x, y: 1 - 2 * x, "top": 0.0})
    psi = np.outer(np.sin(np.pi * np.linspace(0, 1, 17)) ** 2, np.sin(np.pi * np.linspace(0, 1, 17)) ** 2)
    u0 = npns.streamfunction_velocity(g2, psi)
    e_2d = _mirror_pair(g2, bl2, 1 + 0.2 * np.cos(np.pi * X) * np.cos(np.pi * Y), 1 + 0 * X, npns.ModelParams(0.05), 0.02, 1e-3, "navier-stokes", u0)
    worst = max(e_us, e_di, e_2d)
    ok = worst <= 1e-10
    assert report(11, ok, f"US {e_us:.2e}, DI {e_di:.2e}, 2D BL with flow {e_2d:.2e} (tol 1e-10)")


DETERMINISM_CONFIGS = {
    "pb-solve": """
[domain]
dim = 1
extents = [1.0]
cells = [128]
[params]
epsilon = 0.01
[bc]
family = "BL"
w = { left = 1.0, right = -1.0 }
[experiment]
kind = "pb-solve"
""",
    "sweep": """
[domain]
dim = 1
extents = [1.0]
cells = [64]
[bc]
family = "US"
w = 1.0
gamma1 = "exp(-1)"
gamma2 = "exp(1)"
s1 = ["left", "right"]
s2 = ["left", "right"]
[experiment]
kind = "sweep"
eps_list = [0.1, 0.03, 0.01, 0.003, 0.001]
""",
    "decay-study": """
[domain]
dim = 1
extents = [1.0]
cells = [64]
[params]
epsilon = 0.1
[bc]
family = "EN"
[time]
dt_max = 2e-3
t_end = 0.3
output_every = 0.01
[init]
c1 = "1 + 0.01*sin(pi*x)"
c2 = "1 - 0.01*sin(pi*x)"
[experiment]
kind = "decay-study"
""",
    "simulate": """
[domain]
dim = 2
extents = [1.0, 1.0]
cells = [12, 12]
[params]
epsilon = 0.05
[bc]
family = "DI"
w = { left = 1.0, right = -1.0 }
gamma1 = 1.0
gamma2 = 1.0
[fluid]
mode = "navier-stokes"
[time]
dt_max = 1e-3
t_end = 0.02
output_every = 0.01
[init]
c1 = 2.0
c2 = "1 + x"
u = "sin(pi*x)**2*sin(pi*y)**2"
""",
}


def test_criterion_12_determinism(tmp_path, monkeypatch, report):
    monkeypatch.delenv(cli.OUT_ENV, raising=False)
    mismatched = []
    compared = 0
    for kind, text in DETERMINISM_CONFIGS.items():
        cfg = tmp_path / f"{kind}.toml"
        cfg.write_text(text)
        outs = []
        for rep in range(2):
            out = tmp_path / f"{kind}-{rep}"
            workers = ["--workers", "2"] if kind == "sweep" and rep == 1 else []
            assert cli.main([kind, "--config", str(cfg), "--out", str(out), *workers]) == 0
            outs.append(out)
        for f in sorted(outs[0].glob("*.csv")):
            compared += 1
            if f.read_bytes() != (outs[1] / f.name).read_bytes():
                mismatched.append(f"{kind}/{f.name}")
    ok = not mismatched and compared >= 5
    assert report(12, ok, f"{compared} CSV files compared across repeat runs; mismatches: {mismatched or 'none'}")
