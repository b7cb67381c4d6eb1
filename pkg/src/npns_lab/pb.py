"""Poisson-Boltzmann equilibria for the four boundary-condition families.

All four problems share one structure. Each ion species i (valence +1 or -1)
is either *local*, with density exp(-z_i psi)/Z_i fixed by a constant Z_i,
or *nonlocal*, with density I_i exp(-z_i psi)/int(exp(-z_i psi)) fixed by
its total amount I_i. The equilibrium potential minimises

    E[psi] = eps/2 int |grad psi|^2 + sum_local int exp(-z psi)/Z
             + sum_nonlocal I log int exp(-z psi)

over fields with Dirichlet data W, and solves -eps Lap(psi) = rho(psi).
The minimisation is a damped Newton iteration whose Jacobian is the SPD
operator -eps Lap + diag(sum c_i) minus a rank <= 2 correction from the
nonlocal normalisations (handled with the Sherman-Morrison-Woodbury formula).
"""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .diagnostics import interior_sup
from .elliptic import LinearEllipticProblem, SolverError, solve_elliptic, solve_poisson
from .grid import BoundaryData, Grid, build_grid, laplacian
from .io import format_float

logger = logging.getLogger(__name__)

MAX_NEWTON = 200
MAX_HALVINGS = 40


class PBEvaluationError(ArithmeticError):
    """exp(+-psi) left the representable range."""


class PBKind(str, enum.Enum):
    US2 = "US2"
    BL = "BL"
    US_CATION = "US_CATION"
    US_ANION = "US_ANION"


@dataclass(frozen=True)
class PBVariant:
    kind: PBKind
    z1: float | None = None
    z2: float | None = None
    i0: float | None = None
    i1: float | None = None
    i2: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", PBKind(self.kind))
        need = {
            PBKind.US2: ("z1", "z2"),
            PBKind.BL: ("i0",),
            PBKind.US_CATION: ("z1", "i2"),
            PBKind.US_ANION: ("z2", "i1"),
        }[self.kind]
        for name in need:
            val = getattr(self, name)
            if val is None or not (val > 0) or not math.isfinite(val):
                raise ValueError(f"{self.kind.value} needs {name} > 0, got {val}")

    @classmethod
    def us2(cls, z1: float, z2: float) -> "PBVariant":
        return cls(PBKind.US2, z1=z1, z2=z2)

    @classmethod
    def bl(cls, i0: float) -> "PBVariant":
        return cls(PBKind.BL, i0=i0)

    @classmethod
    def us_cation(cls, z1: float, i2: float) -> "PBVariant":
        return cls(PBKind.US_CATION, z1=z1, i2=i2)

    @classmethod
    def us_anion(cls, z2: float, i1: float) -> "PBVariant":
        return cls(PBKind.US_ANION, z2=z2, i1=i1)


@dataclass(frozen=True)
class DerivedConstants:
    z: float | None = None  # minimiser of G for US2
    shift: float = 0.0  # w, added to the potential in the auxiliary problem
    z_tilde: float | None = None  # shifted constant of the local species
    z_prime: float | None = None  # minimiser of K for the auxiliary problem
    interior_limit: float | None = None


def derived_constants(variant: PBVariant, grid: Grid) -> DerivedConstants:
    vol = grid.measure
    if variant.kind is PBKind.US2:
        z = 0.5 * math.log(variant.z2 / variant.z1)
        return DerivedConstants(z=z, interior_limit=z)
    if variant.kind is PBKind.BL:
        return DerivedConstants()
    if variant.kind is PBKind.US_CATION:
        w = max(0.0, math.log(2.0 * variant.i2 * variant.z1 / vol)) + 1.0
        zt = variant.z1 * math.exp(-w)
        zp = math.log(vol / (variant.i2 * zt))
        return DerivedConstants(shift=w, z_tilde=zt, z_prime=zp, interior_limit=math.log(vol / (variant.i2 * variant.z1)))
    w = max(0.0, math.log(2.0 * variant.i1 * variant.z2 / vol)) + 1.0
    zt = variant.z2 * math.exp(-w)
    zp = -math.log(vol / (variant.i1 * zt))
    return DerivedConstants(shift=-w, z_tilde=zt, z_prime=zp, interior_limit=-math.log(vol / (variant.i1 * variant.z2)))


@dataclass(frozen=True)
class _Term:
    valence: int
    local: bool
    const: float  # Z for local species, I for nonlocal ones


def _terms(variant: PBVariant, dc: DerivedConstants) -> tuple[_Term, _Term]:
    k = variant.kind
    if k is PBKind.US2:
        return _Term(1, True, variant.z1), _Term(-1, True, variant.z2)
    if k is PBKind.BL:
        return _Term(1, False, variant.i0), _Term(-1, False, variant.i0)
    if k is PBKind.US_CATION:
        return _Term(1, True, dc.z_tilde), _Term(-1, False, variant.i2)
    return _Term(1, False, variant.i1), _Term(-1, True, dc.z_tilde)


def _exp(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="raise"):
        try:
            return np.exp(x)
        except FloatingPointError as exc:
            raise PBEvaluationError("exp overflow in Boltzmann factor") from exc


def _log_integral(grid: Grid, a: np.ndarray) -> float:
    """log int exp(a) dx, stabilised."""
    m = float(np.max(a))
    return m + math.log(float(np.sum(np.exp(a - m))) * grid.cell_volume)


def _densities(terms, psi: np.ndarray, grid: Grid) -> list[np.ndarray]:
    out = []
    for t in terms:
        a = -t.valence * psi
        if t.local:
            out.append(_exp(a) / t.const)
        else:
            m = float(np.max(a))
            e = np.exp(a - m)
            out.append(t.const * e / (float(np.sum(e)) * grid.cell_volume))
    return out


def _dirichlet_energy(psi: np.ndarray, W: BoundaryData) -> float:
    """int |grad psi|^2 with face differences and half-cell boundary gaps."""
    grid = W.grid
    v = grid.cell_volume
    total = 0.0
    for a in range(grid.dim):
        total += float(np.sum((np.diff(psi, axis=a) / grid.h[a]) ** 2)) * v
    for side in grid.sides:
        axis, _ = grid.side_axis(side)
        h = grid.h[axis]
        gap = psi[grid.side_index(side)] - W.values[side]
        total += 2.0 * float(np.sum(gap**2)) / (h * h) * v
    return total


def _energy(terms, eps: float, psi: np.ndarray, W: BoundaryData) -> float:
    grid = W.grid
    E = 0.5 * eps * _dirichlet_energy(psi, W)
    for t in terms:
        a = -t.valence * psi
        if t.local:
            E += float(np.sum(_exp(a))) * grid.cell_volume / t.const
        else:
            E += t.const * _log_integral(grid, a)
    if not math.isfinite(E):
        raise PBEvaluationError("energy is not finite")
    return E


def _energy_scale(terms, eps: float, psi: np.ndarray, W: BoundaryData) -> float:
    """Sum of the magnitudes of the energy's parts; sets the rounding level of E."""
    grid = W.grid
    scale = 0.5 * eps * _dirichlet_energy(psi, W)
    for t in terms:
        a = -t.valence * psi
        if t.local:
            scale += float(np.sum(_exp(a))) * grid.cell_volume / t.const
        else:
            scale += t.const * (abs(float(np.max(a))) + abs(_log_integral(grid, a)) + 1.0)
    return scale


def pb_energy(variant: PBVariant, eps: float, psi: np.ndarray, W: BoundaryData) -> float:
    """Discrete J (US2), I (BL) or H (US_CATION / US_ANION on the shifted field)."""
    dc = derived_constants(variant, W.grid)
    psi = np.asarray(psi, dtype=float)
    return _energy(_terms(variant, dc), eps, psi + dc.shift, W.shifted(dc.shift))


def pb_residual(variant: PBVariant, eps: float, psi: np.ndarray, W: BoundaryData) -> np.ndarray:
    """-eps Lap(psi) - rho(psi); equals the energy gradient divided by the cell volume."""
    dc = derived_constants(variant, W.grid)
    terms = _terms(variant, dc)
    phi = np.asarray(psi, dtype=float) + dc.shift
    c = _densities(terms, phi, W.grid)
    return -eps * laplacian(phi, W.shifted(dc.shift)) - (c[0] - c[1])


@dataclass
class EquilibriumSolution:
    variant: PBVariant
    eps: float
    grid: Grid
    phi: np.ndarray
    rho: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    energy: float
    residual: float
    converged: bool
    iterations: int
    trace: list[float] = field(default_factory=list)
    drift: float = 0.0
    warnings: list[str] = field(default_factory=list)
    message: str = ""


def _newton_direction(terms, c, F, eps, W: BoundaryData, tol):
    """Solve (A - U C U^T) d = -F with A = -eps Lap + diag(c1 + c2)."""
    grid = W.grid
    hom = W.homogeneous()
    reaction = c[0] + c[1]

    def solve(rhs):
        u, rep = solve_elliptic(LinearEllipticProblem(grid, eps, reaction, rhs, hom), tol)
        if not rep.converged:
            raise SolverError(f"Newton linear solve failed (residual {rep.residual:.3e})")
        return u

    d = solve(-F)
    nonlocal_idx = [k for k, t in enumerate(terms) if not t.local]
    if not nonlocal_idx:
        return d
    v = grid.cell_volume
    U = [c[k] for k in nonlocal_idx]
    AiU = [solve(u) for u in U]
    m = len(U)
    S = np.empty((m, m))
    for i in range(m):
        for j in range(m):
            S[i, j] = -float(np.sum(U[i] * AiU[j]))
        S[i, i] += terms[nonlocal_idx[i]].const / v
    y = np.linalg.solve(S, np.array([float(np.sum(u * d)) for u in U]))
    for j in range(m):
        d = d + y[j] * AiU[j]
    return d


def _log_normalisations(terms, psi, grid) -> np.ndarray:
    """log of the mean of exp(-z psi) for each nonlocal species."""
    vals = [_log_integral(grid, -t.valence * psi) - math.log(grid.measure) for t in terms if not t.local]
    return np.array(vals)


def pb_solve(
    variant: PBVariant,
    eps: float,
    W: BoundaryData,
    grid: Grid | None = None,
    tol: float = 1e-10,
    max_newton: int = MAX_NEWTON,
) -> EquilibriumSolution:
    """Damped Newton solve of the Poisson-Boltzmann problem for ``variant``."""
    if not eps > 0 or not tol > 0:
        raise ValueError("eps and tol must be positive")
    grid = grid or W.grid
    if grid != W.grid:
        raise ValueError("boundary data belongs to a different grid")
    dc = derived_constants(variant, grid)
    terms = _terms(variant, dc)
    Ws = W.shifted(dc.shift)
    warns = []
    if max(grid.h) > math.sqrt(eps) / 4:
        warns.append(f"grid does not resolve the boundary layer: h={max(grid.h):.3g} > sqrt(eps)/4={math.sqrt(eps) / 4:.3g}")

    psi = solve_poisson(1.0, np.zeros(grid.shape), Ws)
    trace: list[float] = []
    prev_norm = None
    has_nonlocal = any(not t.local for t in terms)
    converged = False
    message = ""
    drift = 0.0
    res = math.inf
    k = 0
    for k in range(max_newton + 1):
        c = _densities(terms, psi, grid)
        F = -eps * laplacian(psi, Ws) - (c[0] - c[1])
        res = float(np.max(np.abs(F)))
        E = _energy(terms, eps, psi, Ws)
        trace.append(E)
        norms = _log_normalisations(terms, psi, grid)
        if prev_norm is None:
            drift = math.inf if has_nonlocal else 0.0
        else:
            # relative change |A_prev - A| / A, evaluated in log space
            drift = float(np.max(np.abs(np.expm1(prev_norm - norms)))) if has_nonlocal else 0.0
        prev_norm = norms
        if res <= tol and drift <= tol:
            converged = True
            break
        if k == max_newton:
            message = f"no convergence after {max_newton} Newton steps"
            break
        d = _newton_direction(terms, c, F, eps, Ws, tol=min(1e-3 * max(res, tol), 1e-10))
        alpha = 1.0
        accepted = False
        for _ in range(MAX_HALVINGS):
            trial = psi + alpha * d
            try:
                E_new = _energy(terms, eps, trial, Ws)
            except PBEvaluationError:
                alpha *= 0.5
                continue
            if E_new < E:
                accepted = True
                break
            if E_new <= E + 64 * np.finfo(float).eps * _energy_scale(terms, eps, psi, Ws):
                # tie at rounding level: accept when the residual does not grow
                c_t = _densities(terms, trial, grid)
                F_t = -eps * laplacian(trial, Ws) - (c_t[0] - c_t[1])
                if float(np.max(np.abs(F_t))) <= res:
                    accepted = True
                    break
            alpha *= 0.5
        if not accepted:
            message = "energy did not decrease under full damping"
            break
        psi = trial

    phi = psi - dc.shift
    c = _densities(terms, psi, grid)
    sol = EquilibriumSolution(
        variant=variant,
        eps=eps,
        grid=grid,
        phi=phi,
        rho=c[0] - c[1],
        c1=c[0],
        c2=c[1],
        energy=trace[-1],
        residual=res,
        converged=converged,
        iterations=k,
        trace=trace,
        drift=drift,
        warnings=warns,
        message=message,
    )
    if not converged:
        logger.warning("pb_solve(%s, eps=%g): %s", variant.kind.value, eps, message)
    return sol


# ---------------------------------------------------------------------------
# epsilon continuation


@dataclass(frozen=True)
class GridPolicy:
    """Either a fixed grid or one refined until h <= sqrt(eps)/4."""

    extents: tuple[float, ...]
    cells: tuple[int, ...]
    refine: bool = True

    def grid_for(self, eps: float) -> Grid:
        cells = tuple(self.cells)
        if self.refine:
            need = tuple(int(math.ceil(4.0 * L / math.sqrt(eps))) for L in self.extents)
            cells = tuple(max(c, n) for c, n in zip(cells, need))
            # even counts keep the domain center on a face for symmetric data
            cells = tuple(c + (c % 2) for c in cells)
        return build_grid(len(cells), self.extents, cells)


@dataclass
class SweepEntry:
    eps: float
    interior_sup_rho: float
    energy: float
    phi_center: float
    iters: int
    converged: bool
    cells: tuple[int, ...] = ()
    message: str = ""


SWEEP_COLUMNS = ("eps", "interior_sup_rho", "energy", "phi_center", "iters", "converged")


@dataclass
class SweepReport:
    variant: PBVariant
    margin: float
    entries: list[SweepEntry]

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(e, name) for e in self.entries])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for e in self.entries:
            w.writerow(
                [
                    format_float(e.eps),
                    format_float(e.interior_sup_rho),
                    format_float(e.energy),
                    format_float(e.phi_center),
                    str(e.iters),
                    "true" if e.converged else "false",
                ]
            )
        return buf.getvalue()


def center_value(grid: Grid, f: np.ndarray) -> float:
    """Value at the domain center (mean of the nearest cells)."""
    idx = []
    for n in grid.shape:
        idx.append([n // 2 - 1, n // 2] if n % 2 == 0 else [n // 2])
    return float(np.mean(f[np.ix_(*idx)]))


def _sweep_one(variant: PBVariant, w_spec: Any, policy: GridPolicy, eps: float, margin: float, tol: float) -> tuple[SweepEntry, EquilibriumSolution | None]:
    grid = policy.grid_for(eps)
    try:
        W = BoundaryData.dirichlet(grid, w_spec)
        sol = pb_solve(variant, eps, W, grid, tol)
    except (SolverError, PBEvaluationError, OverflowError, np.linalg.LinAlgError) as exc:
        nan = float("nan")
        return SweepEntry(eps, nan, nan, nan, 0, False, grid.shape, str(exc)), None
    entry = SweepEntry(
        eps=eps,
        interior_sup_rho=interior_sup(grid, sol.rho, margin),
        energy=sol.energy,
        phi_center=center_value(grid, sol.phi),
        iters=sol.iterations,
        converged=sol.converged,
        cells=grid.shape,
        message=sol.message,
    )
    return entry, sol


def epsilon_sweep(
    variant: PBVariant,
    w_spec: Any,
    policy: GridPolicy,
    eps_list: Sequence[float],
    margin: float,
    tol: float = 1e-10,
    workers: int = 1,
    keep_solutions: bool = False,
):
    """Solve for each eps (strictly decreasing) and tabulate interior charge.

    ``w_spec`` is anything :meth:`BoundaryData.dirichlet` accepts; it is
    re-evaluated on each eps's grid. Returns the report, plus the list of
    solutions when ``keep_solutions`` is set.
    """
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])) or any(e <= 0 for e in eps_list):
        raise ValueError("eps_list must be strictly decreasing and positive")
    if not 0 < margin < 0.5 * min(policy.extents):
        raise ValueError("margin must lie in (0, min extent / 2)")
    args = [(variant, w_spec, policy, e, margin, tol) for e in eps_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_star, args))
    else:
        results = [_sweep_one(*a) for a in args]
    report = SweepReport(variant, margin, [r[0] for r in results])
    if keep_solutions:
        return report, [r[1] for r in results]
    return report


def _sweep_star(args):
    return _sweep_one(*args)


def energy_limit(variant: PBVariant, grid: Grid) -> float:
    """eps -> 0 limit of the minimal energy: G(Z)|Omega|, 2 I0 log|Omega|, or K(Z')|Omega| + I log|Omega|."""
    vol = grid.measure
    dc = derived_constants(variant, grid)
    if variant.kind is PBKind.US2:
        return (math.exp(-dc.z) / variant.z1 + math.exp(dc.z) / variant.z2) * vol
    if variant.kind is PBKind.BL:
        return 2.0 * variant.i0 * math.log(vol)
    if variant.kind is PBKind.US_CATION:
        K = math.exp(-dc.z_prime) / dc.z_tilde + variant.i2 / vol * dc.z_prime
        return K * vol + variant.i2 * math.log(vol)
    K = math.exp(dc.z_prime) / dc.z_tilde - variant.i1 / vol * dc.z_prime
    return K * vol + variant.i1 * math.log(vol)
