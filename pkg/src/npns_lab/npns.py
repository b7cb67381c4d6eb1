"""Time integration of the Nernst-Planck-Poisson system with optional flow.

One step for each species i (valence z_i = +1, -1):

    (I - dt D_i Lap) c_i^{n+1} = c_i^n - dt div(F_drift(c_i^n, phi^n) + F_adv(c_i^n, u^n))

where F_drift is the Scharfetter-Gummel flux minus its central-diffusion
part. Diffusion is implicit, drift and advection are explicit with the
potential lagged, and on a discrete Boltzmann state the drift exactly
cancels the diffusion so equilibria are fixed points. The potential is
re-solved from the new charge afterwards.

Velocities live on the interior faces of a staggered (MAC) grid; the fluid
step is an incremental pressure projection with implicit viscosity.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import diagnostics
from .elliptic import LinearEllipticProblem, SolverError, solve_elliptic, solve_poisson, solve_spd
from .grid import (
    DIRICHLET,
    FLUX,
    BoundaryData,
    Grid,
    _axis_matrix,
    _resolve_side_value,
    divergence,
    integrate,
    laplacian_matrix,
    sg_flux,
)

logger = logging.getLogger(__name__)

NEG_TOL = 1e-13
MAX_RETRIES = 10
US_CONSTANCY_TOL = 1e-12
VALENCE = (1, -1)


class StepFailure(RuntimeError):
    pass


class Family(str, enum.Enum):
    BL = "BL"
    DI = "DI"
    US = "US"
    EN = "EN"


class FluidMode(str, enum.Enum):
    OFF = "off"
    STOKES = "stokes"
    NAVIER_STOKES = "navier-stokes"


@dataclass(frozen=True)
class ModelParams:
    eps: float
    d1: float = 1.0
    d2: float = 1.0
    nu: float = 1.0
    kcoup: float = 1.0

    def __post_init__(self):
        for name in ("eps", "d1", "d2", "nu", "kcoup"):
            val = getattr(self, name)
            if not (val > 0 and math.isfinite(val)):
                raise ValueError(f"{name} must be positive, got {val}")

    @property
    def delta(self) -> float:
        return 0.5 * (self.d2 - self.d1)

    @property
    def dmean(self) -> float:
        return 0.5 * (self.d1 + self.d2)

    def diffusivity(self, species: int) -> float:
        return self.d1 if species == 0 else self.d2


@dataclass
class BoundarySpec:
    """Boundary conditions for the ion concentrations plus the potential data W."""

    family: Family
    w: BoundaryData
    gamma1: dict[str, np.ndarray] = field(default_factory=dict)
    gamma2: dict[str, np.ndarray] = field(default_factory=dict)
    s1: tuple[str, ...] = ()
    s2: tuple[str, ...] = ()

    def __post_init__(self):
        self.family = Family(self.family)
        grid = self.grid
        if any(k != DIRICHLET for k in self.w.kinds.values()):
            raise ValueError("the potential needs Dirichlet data on every side")
        if self.family is Family.DI:
            self.s1 = self.s2 = tuple(grid.sides)
        elif self.family is not Family.US:
            self.s1 = self.s2 = ()
        for sides, gam, name in ((self.s1, self.gamma1, "gamma1"), (self.s2, self.gamma2, "gamma2")):
            for side in sides:
                grid.side_axis(side)
                if side not in gam:
                    raise ValueError(f"{name} missing on side {side!r}")
                if np.any(gam[side] <= 0):
                    raise ValueError(f"{name} must be positive on side {side!r}")
            extra = set(gam) - set(sides)
            if extra:
                raise ValueError(f"{name} given on non-selective sides {sorted(extra)}")
        if self.family is Family.US:
            if not self.s1 and not self.s2:
                raise ValueError("US conditions need at least one selective portion")
            self.us_constants()

    @property
    def grid(self) -> Grid:
        return self.w.grid

    @classmethod
    def build(cls, grid: Grid, family, w=0.0, gamma1=None, gamma2=None, s1=(), s2=()):
        """Resolve scalars / callables / per-side mappings onto ``grid``."""
        family = Family(family)
        W = BoundaryData.dirichlet(grid, w)
        if family is Family.DI:
            s1 = s2 = tuple(grid.sides)
        elif family is not Family.US:
            s1 = s2 = ()

        def resolve(gam, sides):
            if gam is None:
                return {}
            if isinstance(gam, Mapping):
                return {s: _resolve_side_value(grid, s, v) for s, v in gam.items()}
            return {s: _resolve_side_value(grid, s, gam) for s in sides}

        return cls(family, W, resolve(gamma1, s1), resolve(gamma2, s2), tuple(s1), tuple(s2))

    def selective_sides(self, species: int) -> tuple[str, ...]:
        return self.s1 if species == 0 else self.s2

    def gamma(self, species: int) -> dict[str, np.ndarray]:
        return self.gamma1 if species == 0 else self.gamma2

    def us_constants(self) -> tuple[float | None, float | None]:
        """Z_i with log(gamma_i) + z_i W = log(1/Z_i) on S_i (None where S_i is empty)."""
        out = []
        for i in (0, 1):
            sides = self.selective_sides(i)
            if not sides:
                out.append(None)
                continue
            mu = np.concatenate([np.ravel(np.log(self.gamma(i)[s]) + VALENCE[i] * self.w.values[s]) for s in sides])
            spread = float(mu.max() - mu.min())
            if spread > US_CONSTANCY_TOL:
                worst = sides[int(np.argmax([np.max(np.abs(np.log(self.gamma(i)[s]) + VALENCE[i] * self.w.values[s] - mu[0])) for s in sides]))]
                raise ValueError(
                    f"log(gamma{i + 1}) + z{i + 1}*W must be constant in space and time on S{i + 1}; "
                    f"spread {spread:.3e} (worst side {worst!r})"
                )
            out.append(float(np.exp(-mu.mean())))
        return out[0], out[1]

    def mirrored(self) -> "BoundarySpec":
        """Species swap: gamma1 <-> gamma2, S1 <-> S2, W -> -W."""
        return BoundarySpec(self.family, self.w.scaled(-1.0), dict(self.gamma2), dict(self.gamma1), self.s2, self.s1)


@dataclass
class SimState:
    grid: Grid
    t: float
    c1: np.ndarray
    c2: np.ndarray
    phi: np.ndarray
    u: tuple | None = None
    p: np.ndarray | None = None

    def species(self, i: int) -> np.ndarray:
        return self.c1 if i == 0 else self.c2


def _check_nonnegative(name: str, c: np.ndarray, tol: float = 0.0):
    bad = np.argwhere(~(c >= -tol))
    if bad.size:
        cell = tuple(int(i) for i in bad[0])
        raise ValueError(f"{name} is negative ({c[cell]:.3e}) at cell {cell}")


def zero_velocity(grid: Grid) -> tuple:
    out = []
    for a in range(grid.dim):
        shape = list(grid.shape)
        shape[a] -= 1
        out.append(np.zeros(shape))
    return tuple(out)


def init_state(
    grid: Grid,
    c1: np.ndarray,
    c2: np.ndarray,
    params: ModelParams,
    bc: BoundarySpec,
    u: tuple | None = None,
    fluid: FluidMode = FluidMode.OFF,
    require_equal_mass: bool = False,
    mass_rtol: float = 1e-12,
) -> SimState:
    c1 = np.array(c1, dtype=float)
    c2 = np.array(c2, dtype=float)
    for name, c in (("c1", c1), ("c2", c2)):
        if c.shape != grid.shape:
            raise ValueError(f"{name} has shape {c.shape}, grid is {grid.shape}")
        _check_nonnegative(name, c)
    if bc.grid != grid:
        raise ValueError("boundary spec is defined on a different grid")
    if require_equal_mass:
        m1, m2 = integrate(grid, c1), integrate(grid, c2)
        if abs(m1 - m2) > mass_rtol * max(m1, m2):
            raise ValueError(f"initial masses differ: {m1!r} vs {m2!r}")
    phi = solve_poisson(params.eps, c1 - c2, bc.w)
    fluid = FluidMode(fluid)
    if fluid is FluidMode.OFF:
        return SimState(grid, 0.0, c1, c2, phi)
    u = zero_velocity(grid) if u is None else tuple(np.array(comp, dtype=float) for comp in u)
    u, _ = project(grid, u)
    return SimState(grid, 0.0, c1, c2, phi, u, np.zeros(grid.shape))


# ---------------------------------------------------------------------------
# Nernst-Planck step


def _interior_pairs(grid: Grid, a: int):
    n = grid.cells[a]
    lo = [slice(None)] * grid.dim
    hi = [slice(None)] * grid.dim
    lo[a] = slice(0, n - 1)
    hi[a] = slice(1, n)
    return tuple(lo), tuple(hi)


def _explicit_fluxes(state: SimState, params: ModelParams, bc: BoundarySpec, i: int):
    """Drift (SG minus central diffusion) and upwind advection fluxes of species i."""
    grid = state.grid
    c, phi = state.species(i), state.phi
    z, D = VALENCE[i], params.diffusivity(i)
    interior = []
    for a in range(grid.dim):
        lo, hi = _interior_pairs(grid, a)
        h = grid.h[a]
        F = sg_flux(c[lo], c[hi], phi[lo], phi[hi], z, D, h) - D * (c[lo] - c[hi]) / h
        if state.u is not None:
            ua = state.u[a]
            F = F + np.where(ua > 0, ua * c[lo], ua * c[hi])
        interior.append(F)

    boundary = {}
    other = state.species(1 - i)
    for side in grid.sides:
        axis, end = grid.side_axis(side)
        h = grid.h[axis]
        idx = grid.side_index(side)
        c_in, phi_in = c[idx], phi[idx]
        W = bc.w.values[side]
        if bc.family is Family.EN:
            c_b, phi_b, dist = other[idx], 2.0 * W - phi_in, h
        elif side in bc.selective_sides(i):
            c_b, phi_b, dist = bc.gamma(i)[side], W, 0.5 * h
        else:
            continue
        if end == 1:
            sg = sg_flux(c_in, c_b, phi_in, phi_b, z, D, dist)
        else:
            sg = -sg_flux(c_b, c_in, phi_b, phi_in, z, D, dist)
        boundary[side] = sg - D * (c_in - c_b) / dist
    return tuple(interior), boundary


def _species_bc(bc: BoundarySpec, i: int) -> BoundaryData:
    grid = bc.grid
    sides = bc.selective_sides(i)
    kinds = {s: DIRICHLET if s in sides else FLUX for s in grid.sides}
    vals = {s: bc.gamma(i)[s] if s in sides else 0.0 for s in grid.sides}
    return BoundaryData(grid, kinds, vals)


@lru_cache(maxsize=32)
def _en_coupling(grid: Grid) -> sp.csr_matrix:
    """Diagonal 1/h^2 weights of the EN ghost faces (ghost c_i = interior c_j)."""
    e = np.zeros(grid.shape)
    for side in grid.sides:
        axis, _ = grid.side_axis(side)
        e[grid.side_index(side)] += 1.0 / grid.h[axis] ** 2
    return sp.diags(e.ravel())


def _implicit_solve(grid: Grid, params: ModelParams, bc: BoundarySpec, rhs: list[np.ndarray], dt: float):
    if bc.family is Family.EN:
        # coupled through the ghosts; rows scaled by 1/D_i make the block system SPD
        L = laplacian_matrix(grid, {s: FLUX for s in grid.sides})
        E = _en_coupling(grid)
        I = sp.identity(grid.size)
        M1 = I / params.d1 - dt * L + dt * E
        M2 = I / params.d2 - dt * L + dt * E
        M = sp.bmat([[M1, -dt * E], [-dt * E, M2]], format="csr")
        b = np.concatenate([rhs[0].ravel() / params.d1, rhs[1].ravel() / params.d2])
        x, rep = solve_spd(M, b, 1e-14 * max(1.0, float(np.max(np.abs(b)))), grid.dim)
        if not rep.converged:
            raise SolverError(f"EN implicit solve failed (residual {rep.residual:.3e})")
        n = grid.size
        return [x[:n].reshape(grid.shape), x[n:].reshape(grid.shape)]
    out = []
    for i in (0, 1):
        prob = LinearEllipticProblem(grid, dt * params.diffusivity(i), 1.0, rhs[i], _species_bc(bc, i))
        c, rep = solve_elliptic(prob, 1e-14 * max(1.0, float(np.max(np.abs(rhs[i])))))
        if not rep.converged:
            raise SolverError(f"implicit diffusion solve failed (residual {rep.residual:.3e})")
        out.append(c)
    return out


def _try_step(state: SimState, params: ModelParams, bc: BoundarySpec, dt: float):
    grid = state.grid
    rhs = []
    for i in (0, 1):
        interior, boundary = _explicit_fluxes(state, params, bc, i)
        rhs.append(state.species(i) - dt * divergence(interior, grid, boundary))
    return _implicit_solve(grid, params, bc, rhs, dt)


def np_step(state: SimState, params: ModelParams, bc: BoundarySpec, dt: float) -> SimState:
    """Advance the concentrations and potential by ``dt`` (or a halved dt on rejection).

    The returned state's ``t`` reflects the step actually taken.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    for attempt in range(MAX_RETRIES + 1):
        c1, c2 = _try_step(state, params, bc, dt)
        worst = min(float(c1.min()), float(c2.min()))
        if worst >= -NEG_TOL:
            phi = solve_poisson(params.eps, c1 - c2, bc.w)
            return replace(state, t=state.t + dt, c1=c1, c2=c2, phi=phi)
        logger.debug("step rejected (min c = %.3e), halving dt=%.3e", worst, dt)
        dt *= 0.5
    raise StepFailure(f"negative concentration persists after {MAX_RETRIES} halvings (dt={dt:.3e})")


def max_potential_gradient(state: SimState, bc: BoundarySpec) -> float:
    grid = state.grid
    g = 0.0
    for a in range(grid.dim):
        g = max(g, float(np.max(np.abs(np.diff(state.phi, axis=a)))) / grid.h[a])
    for side in grid.sides:
        axis, _ = grid.side_axis(side)
        gap = np.abs(state.phi[grid.side_index(side)] - bc.w.values[side])
        g = max(g, float(np.max(gap)) / (0.5 * grid.h[axis]))
    return g


def stable_dt(state: SimState, params: ModelParams, bc: BoundarySpec, dt_cap: float) -> float:
    """Explicit-part step bound: advection CFL, drift CFL and charge relaxation."""
    grid = state.grid
    h = min(grid.h)
    dmax = max(params.d1, params.d2)
    bounds = [dt_cap]
    if state.u is not None:
        umax = max((float(np.max(np.abs(c))) for c in state.u if c.size), default=0.0)
        if umax > 0:
            bounds.append(h / umax)
    gmax = max_potential_gradient(state, bc)
    if gmax > 0:
        bounds.append(h / (2.0 * dmax * gmax))
    smax = float(np.max(state.c1 + state.c2))
    if smax > 0:
        bounds.append(params.eps / (dmax * smax))
    return min(bounds)


# ---------------------------------------------------------------------------
# fluid


def _node_matrix(n: int, h: float) -> sp.csr_matrix:
    """Second difference on n-1 interior face nodes with zero end values."""
    m = n - 1
    return sp.diags([np.ones(m - 1), np.full(m, -2.0), np.ones(m - 1)], [-1, 0, 1], format="csr") / (h * h)


@lru_cache(maxsize=32)
def _velocity_laplacian(grid: Grid, a: int) -> sp.csr_matrix:
    mats = []
    for b in range(grid.dim):
        if b == a:
            mats.append(_node_matrix(grid.cells[b], grid.h[b]))
        else:
            mats.append(_axis_matrix(grid.cells[b], grid.h[b], DIRICHLET, DIRICHLET))
    if grid.dim == 1:
        return mats[0]
    n0, n1 = mats[0].shape[0], mats[1].shape[0]
    return (sp.kron(mats[0], sp.identity(n1)) + sp.kron(sp.identity(n0), mats[1])).tocsr()


@lru_cache(maxsize=32)
def _viscous_factor(grid: Grid, a: int, dt_nu: float):
    L = _velocity_laplacian(grid, a)
    return spla.splu((sp.identity(L.shape[0]) - dt_nu * L).tocsc())


@lru_cache(maxsize=16)
def _pressure_factor(grid: Grid):
    L = laplacian_matrix(grid, {s: FLUX for s in grid.sides}).tolil()
    L[0, :] = 0.0
    L[0, 0] = 1.0
    return spla.splu(L.tocsc())


def face_gradient(f: np.ndarray, grid: Grid) -> tuple:
    return tuple(np.diff(f, axis=a) / grid.h[a] for a in range(grid.dim))


def project(grid: Grid, u: tuple) -> tuple[tuple, np.ndarray]:
    """Discrete Helmholtz projection: returns (divergence-free u, potential q with u_in = u + grad q)."""
    div = divergence(u, grid)
    b = div.ravel().copy()
    b -= b.mean()
    b[0] = 0.0
    q = _pressure_factor(grid).solve(b).reshape(grid.shape)
    q -= q.mean()
    grad = face_gradient(q, grid)
    return tuple(ua - ga for ua, ga in zip(u, grad)), q


def _advection(u: tuple, grid: Grid) -> tuple:
    """Central (u.grad)u on the MAC faces with no-slip ghosts (2D)."""
    if grid.dim == 1:
        return (np.zeros_like(u[0]),)
    hx, hy = grid.h
    ux, uy = u
    U = np.pad(ux, ((1, 1), (0, 0)))  # (nx+1, ny) with wall faces
    V = np.pad(uy, ((0, 0), (1, 1)))  # (nx, ny+1)
    # tangential ghosts mirror with a sign flip across the walls
    Ug = np.concatenate([-ux[:, :1], ux, -ux[:, -1:]], axis=1)
    Vg = np.concatenate([-uy[:1, :], uy, -uy[-1:, :]], axis=0)
    dudx = (U[2:, :] - U[:-2, :]) / (2 * hx)
    dudy = (Ug[:, 2:] - Ug[:, :-2]) / (2 * hy)
    v_on_u = 0.25 * (V[:-1, :-1] + V[1:, :-1] + V[:-1, 1:] + V[1:, 1:])
    adv_u = ux * dudx + v_on_u * dudy
    dvdy = (V[:, 2:] - V[:, :-2]) / (2 * hy)
    dvdx = (Vg[2:, :] - Vg[:-2, :]) / (2 * hx)
    u_on_v = 0.25 * (U[:-1, :-1] + U[1:, :-1] + U[:-1, 1:] + U[1:, 1:])
    adv_v = u_on_v * dvdx + uy * dvdy
    return adv_u, adv_v


def electric_force(state: SimState, params: ModelParams) -> tuple:
    """-K rho grad(phi) on the interior faces."""
    grid = state.grid
    rho = state.c1 - state.c2
    out = []
    for a in range(grid.dim):
        lo, hi = _interior_pairs(grid, a)
        rho_f = 0.5 * (rho[lo] + rho[hi])
        out.append(-params.kcoup * rho_f * (state.phi[hi] - state.phi[lo]) / grid.h[a])
    return tuple(out)


def fluid_step(state: SimState, params: ModelParams, dt: float, mode: FluidMode = FluidMode.STOKES) -> SimState:
    mode = FluidMode(mode)
    if mode is FluidMode.OFF or state.u is None:
        raise ValueError("fluid_step needs an active fluid mode and a velocity field")
    grid = state.grid
    u = state.u
    p = state.p if state.p is not None else np.zeros(grid.shape)
    adv = _advection(u, grid) if mode is FluidMode.NAVIER_STOKES else tuple(np.zeros_like(c) for c in u)
    u_star = []
    for a in range(grid.dim):
        rhs = (u[a] - dt * adv[a]).ravel()
        u_star.append(_viscous_factor(grid, a, dt * params.nu).solve(rhs).reshape(u[a].shape))
    force = electric_force(state, params)
    gp = face_gradient(p, grid)
    u2 = tuple(us + dt * (f - g) for us, f, g in zip(u_star, force, gp))
    u_new, q = project(grid, u2)
    p_new = p + q / dt
    p_new -= p_new.mean()
    return replace(state, u=u_new, p=p_new)


def streamfunction_velocity(grid: Grid, psi_nodes: np.ndarray) -> tuple:
    """Discretely divergence-free MAC velocity from node values of a streamfunction."""
    if grid.dim != 2:
        raise ValueError("streamfunction velocities need a 2D grid")
    psi = np.array(psi_nodes, dtype=float)
    psi[0, :] = psi[-1, :] = psi[:, 0] = psi[:, -1] = 0.0
    hx, hy = grid.h
    ux = (psi[1:-1, 1:] - psi[1:-1, :-1]) / hy
    uy = -(psi[1:, 1:-1] - psi[:-1, 1:-1]) / hx
    return ux, uy


# ---------------------------------------------------------------------------
# driver


@dataclass
class Trajectory:
    records: list = field(default_factory=list)
    failed: bool = False
    message: str = ""
    final_state: SimState | None = None
    steps: int = 0
    peak_c1: float = 0.0
    peak_c2: float = 0.0
    initial_max: tuple[float, float] = (0.0, 0.0)
    min_c: float = math.inf


def simulate(
    state: SimState,
    params: ModelParams,
    bc: BoundarySpec,
    t_end: float,
    dt_max: float,
    output_every: float,
    fluid: FluidMode = FluidMode.OFF,
    margin: float = 0.25,
    callback: Callable[[SimState], None] | None = None,
) -> Trajectory:
    """March from ``state`` to ``t_end`` recording diagnostics at multiples of ``output_every``."""
    fluid = FluidMode(fluid)
    if not (t_end > 0 and dt_max > 0 and output_every > 0):
        raise ValueError("t_end, dt_max and output_every must be positive")
    traj = Trajectory()
    traj.initial_max = (float(state.c1.max()), float(state.c2.max()))
    traj.peak_c1, traj.peak_c2 = traj.initial_max
    traj.min_c = min(float(state.c1.min()), float(state.c2.min()))
    traj.records.append(diagnostics.record(state, params, bc.family, margin))
    n_out = int(math.floor(t_end / output_every + 1e-9))
    targets = [k * output_every for k in range(1, n_out + 1)]
    if not targets or targets[-1] < t_end * (1 - 1e-12):
        targets.append(t_end)
    for target in targets:
        while state.t < target:
            dt = min(stable_dt(state, params, bc, dt_max), target - state.t)
            try:
                new = np_step(state, params, bc, dt)
                if fluid is not FluidMode.OFF:
                    new = fluid_step(new, params, new.t - state.t, fluid)
            except (StepFailure, SolverError) as exc:
                traj.failed, traj.message = True, str(exc)
                traj.final_state = state
                logger.error("simulation stopped at t=%.6g: %s", state.t, exc)
                return traj
            if target - new.t <= 1e-12 * max(1.0, target):
                new.t = target
            state = new
            traj.steps += 1
            traj.peak_c1 = max(traj.peak_c1, float(state.c1.max()))
            traj.peak_c2 = max(traj.peak_c2, float(state.c2.max()))
            traj.min_c = min(traj.min_c, float(state.c1.min()), float(state.c2.min()))
            if callback is not None:
                callback(state)
        traj.records.append(diagnostics.record(state, params, bc.family, margin))
    traj.final_state = state
    return traj


def mirror_state(state: SimState) -> SimState:
    return replace(state, c1=state.c2.copy(), c2=state.c1.copy(), phi=-state.phi)
