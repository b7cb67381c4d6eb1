"""Uniform cell-centered meshes, boundary data and discrete operators.

Scalar fields are plain ``numpy`` arrays of shape ``grid.shape`` holding one
value per cell. Face fields (``VectorField``) are tuples with one array per
axis; the component along axis ``a`` lives on the interior faces normal to
``a`` and has ``cells[a] - 1`` entries along that axis.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Mapping, Union

import numpy as np
import scipy.sparse as sp

MIN_CELLS = 8

SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")

# side -> (axis, end) with end 0 at the low coordinate, 1 at the high one
_SIDE_AXIS = {
    "left": (0, 0),
    "right": (0, 1),
    "bottom": (1, 0),
    "top": (1, 1),
}

DIRICHLET = "dirichlet"
FLUX = "flux"

VectorField = tuple  # tuple[np.ndarray, ...], one interior-face array per axis
BoundaryValue = Union[float, np.ndarray, Callable[..., np.ndarray]]


@dataclass(frozen=True)
class Grid:
    extents: tuple[float, ...]
    cells: tuple[int, ...]

    def __post_init__(self):
        if len(self.extents) != len(self.cells) or len(self.cells) not in (1, 2):
            raise ValueError("grid must be 1D or 2D with one extent per axis")
        for L in self.extents:
            if not np.isfinite(L) or L <= 0:
                raise ValueError(f"extents must be positive, got {self.extents}")
        for n in self.cells:
            if int(n) != n or n < MIN_CELLS:
                raise ValueError(f"need at least {MIN_CELLS} cells per axis, got {self.cells}")

    @property
    def dim(self) -> int:
        return len(self.cells)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(int(n) for n in self.cells)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.extents, self.cells))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def measure(self) -> float:
        return float(np.prod(self.extents))

    @property
    def sides(self) -> tuple[str, ...]:
        return SIDES_1D if self.dim == 1 else SIDES_2D

    def centers(self, axis: int = 0) -> np.ndarray:
        """1D array of cell-center coordinates along ``axis``."""
        h = self.h[axis]
        return (np.arange(self.cells[axis]) + 0.5) * h

    def mesh(self) -> tuple[np.ndarray, ...]:
        """Cell-center coordinates broadcast to ``shape`` (ij indexing)."""
        return tuple(np.meshgrid(*[self.centers(a) for a in range(self.dim)], indexing="ij"))

    def side_axis(self, side: str) -> tuple[int, int]:
        if side not in self.sides:
            raise ValueError(f"unknown side {side!r} for a {self.dim}D grid")
        return _SIDE_AXIS[side]

    def side_index(self, side: str) -> tuple:
        """Index of the layer of cells adjacent to ``side``."""
        axis, end = self.side_axis(side)
        idx = [slice(None)] * self.dim
        idx[axis] = 0 if end == 0 else self.cells[axis] - 1
        return tuple(idx)

    def side_shape(self, side: str) -> tuple[int, ...]:
        axis, _ = self.side_axis(side)
        return tuple(n for a, n in enumerate(self.shape) if a != axis)

    def face_coords(self, side: str) -> tuple[np.ndarray, ...]:
        """Coordinates (x[, y]) of the boundary face centers on ``side``."""
        axis, end = self.side_axis(side)
        coords = []
        for a in range(self.dim):
            if a == axis:
                val = 0.0 if end == 0 else self.extents[a]
                coords.append(np.full(self.side_shape(side), val))
            else:
                coords.append(self.centers(a))
        return tuple(coords)

    def fingerprint(self) -> str:
        text = f"{self.extents!r}|{self.cells!r}"
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_grid(dim: int, extents, cells) -> Grid:
    extents = tuple(float(v) for v in np.atleast_1d(extents))
    cells = tuple(int(v) for v in np.atleast_1d(cells))
    if len(extents) != dim or len(cells) != dim:
        raise ValueError(f"expected {dim} extents and cell counts")
    return Grid(extents, cells)


def _resolve_side_value(grid: Grid, side: str, value: BoundaryValue) -> np.ndarray:
    shape = grid.side_shape(side)
    if callable(value):
        out = np.asarray(value(*grid.face_coords(side)), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    out = np.broadcast_to(out, shape).astype(float)
    if not np.all(np.isfinite(out)):
        raise ValueError(f"non-finite boundary value on side {side!r}")
    return out


@dataclass
class BoundaryData:
    """Per-side boundary condition: a prescribed value or an outward normal flux.

    For ``flux`` sides the value is the outward normal derivative n.grad(f).
    """

    grid: Grid
    kinds: dict[str, str]
    values: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        missing = set(self.grid.sides) - set(self.kinds)
        extra = set(self.kinds) - set(self.grid.sides)
        if missing or extra:
            raise ValueError(f"boundary data must cover sides {self.grid.sides}")
        for side, kind in self.kinds.items():
            if kind not in (DIRICHLET, FLUX):
                raise ValueError(f"unknown boundary kind {kind!r} on {side!r}")
            self.values[side] = _resolve_side_value(self.grid, side, self.values.get(side, 0.0))

    @classmethod
    def dirichlet(cls, grid: Grid, value: Union[BoundaryValue, Mapping[str, BoundaryValue]] = 0.0):
        vals = _per_side(grid, value)
        return cls(grid, {s: DIRICHLET for s in grid.sides}, vals)

    @classmethod
    def neumann(cls, grid: Grid, value: Union[BoundaryValue, Mapping[str, BoundaryValue]] = 0.0):
        vals = _per_side(grid, value)
        return cls(grid, {s: FLUX for s in grid.sides}, vals)

    def homogeneous(self) -> "BoundaryData":
        return BoundaryData(self.grid, dict(self.kinds), {s: 0.0 for s in self.grid.sides})

    def scaled(self, factor: float) -> "BoundaryData":
        return BoundaryData(self.grid, dict(self.kinds), {s: factor * v for s, v in self.values.items()})

    def shifted(self, offset: float) -> "BoundaryData":
        """Add ``offset`` to Dirichlet values (flux values unchanged)."""
        vals = {s: v + offset if self.kinds[s] == DIRICHLET else v for s, v in self.values.items()}
        return BoundaryData(self.grid, dict(self.kinds), vals)

    def dirichlet_range(self) -> tuple[float, float]:
        vals = [v for s, v in self.values.items() if self.kinds[s] == DIRICHLET]
        if not vals:
            raise ValueError("no Dirichlet sides")
        flat = np.concatenate([np.ravel(v) for v in vals])
        return float(flat.min()), float(flat.max())


def _per_side(grid: Grid, value) -> dict:
    if isinstance(value, Mapping):
        unknown = set(value) - set(grid.sides)
        if unknown:
            raise ValueError(f"unknown sides {sorted(unknown)}")
        return {s: value.get(s, 0.0) for s in grid.sides}
    return {s: value for s in grid.sides}


def integrate(grid: Grid, f: np.ndarray) -> float:
    """Midpoint quadrature; exact for cellwise-constant fields."""
    f = np.asarray(f, dtype=float)
    if f.shape != grid.shape:
        raise ValueError(f"field shape {f.shape} does not match grid {grid.shape}")
    return float(np.sum(f) * grid.cell_volume)


def mean(grid: Grid, f: np.ndarray) -> float:
    return integrate(grid, f) / grid.measure


# ---------------------------------------------------------------------------
# Laplacian assembly


def _axis_matrix(n: int, h: float, low: str, high: str) -> sp.csr_matrix:
    """1D second difference with ghost-reflection Dirichlet or zero-flux ends."""
    main = np.full(n, -2.0)
    off = np.ones(n - 1)
    main[0] = -3.0 if low == DIRICHLET else -1.0
    main[-1] = -3.0 if high == DIRICHLET else -1.0
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / (h * h)


def laplacian_matrix(grid: Grid, kinds: Mapping[str, str]) -> sp.csr_matrix:
    """Sparse discrete Laplacian for homogeneous data of the given kinds.

    The result is cached per (grid, kinds) and must not be modified in place.
    """
    return _laplacian_matrix(grid, tuple(sorted(kinds.items())))


@lru_cache(maxsize=64)
def _laplacian_matrix(grid: Grid, kind_items: tuple) -> sp.csr_matrix:
    kinds = dict(kind_items)
    if grid.dim == 1:
        return _axis_matrix(grid.cells[0], grid.h[0], kinds["left"], kinds["right"])
    nx, ny = grid.shape
    hx, hy = grid.h
    Ax = _axis_matrix(nx, hx, kinds["left"], kinds["right"])
    Ay = _axis_matrix(ny, hy, kinds["bottom"], kinds["top"])
    return (sp.kron(Ax, sp.identity(ny)) + sp.kron(sp.identity(nx), Ay)).tocsr()


def boundary_source(bc: BoundaryData) -> np.ndarray:
    """Inhomogeneous part so that ``lap(f) = L @ f + source``."""
    grid = bc.grid
    src = np.zeros(grid.shape)
    for side in grid.sides:
        axis, _ = grid.side_axis(side)
        h = grid.h[axis]
        val = bc.values[side]
        if bc.kinds[side] == DIRICHLET:
            src[grid.side_index(side)] += 2.0 * val / (h * h)
        else:
            src[grid.side_index(side)] += val / h
    return src


def laplacian(f: np.ndarray, bc: BoundaryData) -> np.ndarray:
    """Second-order 3-point / 5-point Laplacian with ghost-cell boundary data."""
    grid = bc.grid
    f = np.asarray(f, dtype=float)
    out = np.zeros(grid.shape)
    for axis in range(grid.dim):
        h2 = grid.h[axis] ** 2
        d = np.diff(f, axis=axis) / h2
        pad_lo = [(0, 0)] * grid.dim
        pad_hi = [(0, 0)] * grid.dim
        pad_lo[axis] = (1, 0)
        pad_hi[axis] = (0, 1)
        out += np.pad(d, pad_hi) - np.pad(d, pad_lo)
    for side in grid.sides:
        axis, _ = grid.side_axis(side)
        h = grid.h[axis]
        idx = grid.side_index(side)
        if bc.kinds[side] == DIRICHLET:
            out[idx] += 2.0 * (bc.values[side] - f[idx]) / (h * h)
        else:
            out[idx] += bc.values[side] / h
    return out


def gradient(f: np.ndarray, grid: Grid) -> VectorField:
    """Face-normal differences on interior faces."""
    return tuple(np.diff(f, axis=a) / grid.h[a] for a in range(grid.dim))


def divergence(flux: VectorField, grid: Grid, boundary_flux: Mapping[str, np.ndarray] | None = None) -> np.ndarray:
    """Cell divergence of a face flux.

    ``boundary_flux`` maps side -> outward normal flux on that side's faces;
    missing sides carry zero flux.
    """
    out = np.zeros(grid.shape)
    for a, F in enumerate(flux):
        pad = [(0, 0)] * grid.dim
        pad[a] = (1, 1)
        Fp = np.pad(F, pad)
        out += np.diff(Fp, axis=a) / grid.h[a]
    if boundary_flux:
        for side, q in boundary_flux.items():
            axis, _ = grid.side_axis(side)
            out[grid.side_index(side)] += q / grid.h[axis]
    return out


# ---------------------------------------------------------------------------
# Scharfetter-Gummel flux

_SERIES_CUTOFF = 1e-5


def bernoulli(t: np.ndarray) -> np.ndarray:
    """B(t) = t / (exp(t) - 1), with B(0) = 1."""
    t = np.asarray(t, dtype=float)
    out = np.empty_like(t)
    small = np.abs(t) < _SERIES_CUTOFF
    ts = t[small]
    out[small] = 1.0 - ts / 2.0 + ts * ts / 12.0
    # for t > 0 use t e^{-t} / (1 - e^{-t}) so nothing overflows
    pos = ~small & (t > 0)
    neg = ~small & (t < 0)
    tp = t[pos]
    out[pos] = tp * np.exp(-tp) / -np.expm1(-tp)
    tn = t[neg]
    out[neg] = tn / np.expm1(tn)
    return out


def sg_flux(c_left, c_right, phi_left, phi_right, valence: int, diffusivity: float, dist: float):
    """Exponentially fitted flux from the left state to the right state.

    Approximates -D (c' + z c phi') across a segment of length ``dist``;
    vanishes identically when c is proportional to exp(-z phi).
    """
    theta = valence * (np.asarray(phi_right) - np.asarray(phi_left))
    return diffusivity / dist * (bernoulli(theta) * c_left - bernoulli(-theta) * c_right)


def edge_flux(c: np.ndarray, phi: np.ndarray, valence: int, diffusivity: float, grid: Grid) -> VectorField:
    """Scharfetter-Gummel flux on every interior face, positive along +axis."""
    if np.any(np.asarray(c) < 0):
        bad = tuple(int(k) for k in np.argwhere(c < 0)[0])
        raise ValueError(f"edge_flux needs nonnegative concentrations; c = {c[bad]:.3e} at cell {bad}")
    out = []
    for a in range(grid.dim):
        n = grid.cells[a]
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[a] = slice(0, n - 1)
        hi[a] = slice(1, n)
        lo, hi = tuple(lo), tuple(hi)
        out.append(sg_flux(c[lo], c[hi], phi[lo], phi[hi], valence, diffusivity, grid.h[a]))
    return tuple(out)
