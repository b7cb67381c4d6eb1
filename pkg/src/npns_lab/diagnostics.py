"""Measured quantities, the EN quadratic-form ledger, decay fits and bound monitors.

Functions taking a ``state`` only rely on its ``grid``, ``c1``, ``c2``,
``phi`` and ``u`` attributes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .grid import Grid, integrate, mean
from .io import write_rows


def charge_and_salt(state) -> tuple[np.ndarray, np.ndarray]:
    return state.c1 - state.c2, state.c1 + state.c2


def electrochemical_potentials(state) -> tuple[np.ndarray, np.ndarray]:
    """mu_i = log c_i + z_i phi with z_1 = +1, z_2 = -1."""
    for name in ("c1", "c2"):
        c = getattr(state, name)
        bad = np.argwhere(~(c > 0))
        if bad.size:
            raise ValueError(f"{name} is not positive at cell {tuple(int(i) for i in bad[0])}")
    return np.log(state.c1) + state.phi, np.log(state.c2) - state.phi


def compact_mask(grid: Grid, margin: float) -> np.ndarray:
    """Cells whose centers lie at distance >= margin from every boundary."""
    if not margin < 0.5 * min(grid.extents):
        raise ValueError(f"margin {margin} leaves no interior compact set")
    mask = np.ones(grid.shape, dtype=bool)
    for a, coords in enumerate(grid.mesh()):
        L = grid.extents[a]
        mask &= (coords >= margin) & (coords <= L - margin)
    if not mask.any():
        raise ValueError(f"margin {margin} leaves no cells in the compact set")
    return mask


def interior_sup(grid: Grid, f: np.ndarray, margin: float) -> float:
    return float(np.max(np.abs(np.asarray(f)[compact_mask(grid, margin)])))


def _gradient_energy(grid: Grid, f: np.ndarray, dirichlet_zero: bool) -> float:
    """int |grad f|^2; boundary faces use the reflected ghost when ``dirichlet_zero``."""
    v = grid.cell_volume
    total = 0.0
    for a in range(grid.dim):
        total += float(np.sum((np.diff(f, axis=a) / grid.h[a]) ** 2)) * v
    if dirichlet_zero:
        for side in grid.sides:
            axis, _ = grid.side_axis(side)
            h = grid.h[axis]
            total += 2.0 * float(np.sum(f[grid.side_index(side)] ** 2)) / (h * h) * v
    return total


@dataclass(frozen=True)
class ENLedger:
    q: float
    q1: float
    r: float
    p: float


def en_quadratic_monitor(state, params, family=None) -> ENLedger:
    """Q, Q1, R and P of the electroneutral L^2 dissipation identity."""
    if family is not None and str(getattr(family, "value", family)) != "EN":
        raise ValueError("the quadratic ledger is defined for EN boundary conditions only")
    grid = state.grid
    rho, sigma = charge_and_salt(state)
    d1, d2 = params.d1, params.d2
    delta, dm = 0.5 * (d2 - d1), 0.5 * (d1 + d2)
    rho_bar, sigma_bar = mean(grid, rho), mean(grid, sigma)
    q1 = 0.5 * integrate(grid, (delta / math.sqrt(dm) * (rho - rho_bar) + math.sqrt(dm) * (sigma - sigma_bar)) ** 2)
    p_int = integrate(grid, (0.5 * dm - delta**2 / (2.0 * dm)) * rho**2)
    r = _gradient_energy(grid, sigma, False) + _gradient_energy(grid, rho, True)
    return ENLedger(q=(p_int + q1) / (d1 * d2), q1=q1, r=r, p=p_int / (d1 * d2))


def linear_invariant(state, params) -> float:
    """delta*mean(rho) + D*mean(sigma); conserved under EN conditions."""
    grid = state.grid
    rho, sigma = charge_and_salt(state)
    delta, dm = 0.5 * (params.d2 - params.d1), 0.5 * (params.d1 + params.d2)
    return delta * mean(grid, rho) + dm * mean(grid, sigma)


def kinetic_energy(state) -> float:
    u = getattr(state, "u", None)
    if u is None:
        return 0.0
    v = state.grid.cell_volume
    return 0.5 * sum(float(np.sum(comp**2)) for comp in u) * v


@dataclass
class DiagnosticsRecord:
    t: float
    mass1: float
    mass2: float
    rho_l1: float
    rho_l2: float
    rho_linf: float
    rho_intsup: float
    max_c1: float
    max_c2: float
    q: float
    q1: float
    r: float
    p: float
    ke: float
    lininv: float


RECORD_COLUMNS = tuple(f.name for f in fields(DiagnosticsRecord))


def record(state, params, family, margin: float) -> DiagnosticsRecord:
    grid = state.grid
    rho, _ = charge_and_salt(state)
    nan = float("nan")
    if str(getattr(family, "value", family)) == "EN":
        led = en_quadratic_monitor(state, params)
    else:
        led = ENLedger(nan, nan, nan, nan)
    return DiagnosticsRecord(
        t=float(state.t),
        mass1=integrate(grid, state.c1),
        mass2=integrate(grid, state.c2),
        rho_l1=integrate(grid, np.abs(rho)),
        rho_l2=math.sqrt(integrate(grid, rho**2)),
        rho_linf=float(np.max(np.abs(rho))),
        rho_intsup=interior_sup(grid, rho, margin),
        max_c1=float(np.max(state.c1)),
        max_c2=float(np.max(state.c2)),
        q=led.q,
        q1=led.q1,
        r=led.r,
        p=led.p,
        ke=kinetic_energy(state),
        lininv=linear_invariant(state, params),
    )


def records_to_csv(records: Sequence[DiagnosticsRecord]) -> str:
    return write_rows(RECORD_COLUMNS, ([float(v) for v in asdict(r).values()] for r in records))


# ---------------------------------------------------------------------------
# decay fitting

_FLOOR = 1e-14


@dataclass(frozen=True)
class DecayFit:
    rate: float
    prefactor: float
    t0: float
    t1: float
    residual: float
    points: int


def decay_fit(times: Sequence[float], values: Sequence[float], window: tuple[float, float] | None = None) -> DecayFit:
    """Least-squares fit of log(values) = log(C) - rate * t over ``window``.

    The default window drops the first 20% of the horizon. Samples from the
    first value below 1e-14 onwards are discarded.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if window is None:
        window = (t[0] + 0.2 * (t[-1] - t[0]), t[-1])
    t0, t1 = window
    sel = (t >= t0) & (t <= t1)
    t, y = t[sel], y[sel]
    small = np.nonzero(~(y >= _FLOOR))[0]
    if small.size:
        t, y = t[: small[0]], y[: small[0]]
    if t.size < 3:
        raise ValueError(f"decay fit needs at least 3 points, got {t.size}")
    A = np.column_stack([np.ones_like(t), t])
    logy = np.log(y)
    coef, *_ = np.linalg.lstsq(A, logy, rcond=None)
    resid = float(np.linalg.norm(A @ coef - logy))
    return DecayFit(rate=float(-coef[1]), prefactor=float(np.exp(coef[0])), t0=float(t[0]), t1=float(t[-1]), residual=resid, points=int(t.size))


# ---------------------------------------------------------------------------
# maximum principles

MP_THRESHOLD = 1.0 + 1e-8


@dataclass(frozen=True)
class MaxPrincipleReport:
    bound: float
    worst_ratio: float
    passed: bool


def max_principle_monitor(trajectory, bc) -> MaxPrincipleReport:
    """Compare the space-time maximum of c_i against the DI or EN bound."""
    family = str(getattr(bc.family, "value", bc.family))
    init = trajectory.initial_max
    if family == "DI":
        gam = [float(np.max(v)) for g in (bc.gamma1, bc.gamma2) for v in g.values()]
        bound = max(gam + list(init))
    elif family == "EN":
        bound = max(init)
    else:
        raise ValueError(f"no maximum principle monitored for family {family}")
    worst = max(trajectory.peak_c1, trajectory.peak_c2) / bound
    return MaxPrincipleReport(bound=bound, worst_ratio=worst, passed=worst <= MP_THRESHOLD)


# ---------------------------------------------------------------------------
# subharmonicity


def interior_laplacian(grid: Grid, f: np.ndarray) -> np.ndarray:
    """Centered discrete Laplacian on cells not adjacent to the boundary (no boundary data used)."""
    f = np.asarray(f, dtype=float)
    out = np.zeros(tuple(n - 2 for n in grid.shape))
    for a in range(grid.dim):
        d2 = np.diff(f, 2, axis=a) / grid.h[a] ** 2
        sl = [slice(1, -1)] * grid.dim
        sl[a] = slice(None)
        out += d2[tuple(sl)]
    return out


def square_subharmonicity(grid: Grid, rho: np.ndarray) -> tuple[float, float]:
    """(min over interior cells of Lap(rho^2), max rho^2); subharmonic when the first is >= -tol * second."""
    sq = np.asarray(rho, dtype=float) ** 2
    return float(np.min(interior_laplacian(grid, sq))), float(np.max(sq))
