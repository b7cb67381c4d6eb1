"""SPD solves for -kappa*Lap(u) + reaction*u = rhs on the structured grid."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import BoundaryData, Grid, boundary_source, laplacian, laplacian_matrix

logger = logging.getLogger(__name__)

# residuals below this multiple of the rounding level cannot be certified
_ROUNDING_FACTOR = 64.0


class SolverError(RuntimeError):
    pass


@dataclass
class LinearEllipticProblem:
    grid: Grid
    kappa: float
    reaction: np.ndarray | float
    rhs: np.ndarray
    bc: BoundaryData

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        self.reaction = np.broadcast_to(np.asarray(self.reaction, dtype=float), self.grid.shape)
        if np.any(self.reaction < 0):
            raise ValueError("reaction coefficient must be nonnegative")
        self.rhs = np.asarray(self.rhs, dtype=float)
        if self.rhs.shape != self.grid.shape or not np.all(np.isfinite(self.rhs)):
            raise ValueError("rhs must be a finite field on the grid")

    def matrix(self) -> sp.csr_matrix:
        A = laplacian_matrix(self.grid, self.bc.kinds).copy()
        A.data *= -self.kappa
        A.setdiag(A.diagonal() + self.reaction.ravel())
        return A

    def load(self) -> np.ndarray:
        return (self.rhs + self.kappa * boundary_source(self.bc)).ravel()

    def residual(self, u: np.ndarray) -> np.ndarray:
        return -self.kappa * laplacian(u, self.bc) + self.reaction * u - self.rhs


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    tolerance: float


def rounding_floor(A: sp.spmatrix, x: np.ndarray, b: np.ndarray) -> float:
    A = A if sp.isspmatrix_csr(A) else sp.csr_matrix(A)
    norm_a = float(np.max(np.add.reduceat(np.abs(A.data), A.indptr[:-1]))) if A.nnz else 0.0
    return _ROUNDING_FACTOR * np.finfo(float).eps * (norm_a * float(np.max(np.abs(x), initial=0.0)) + float(np.max(np.abs(b), initial=0.0)))


def _tridiagonal_solve(A: sp.csr_matrix, b: np.ndarray) -> np.ndarray:
    n = A.shape[0]
    ab = np.zeros((3, n))
    ab[0, 1:] = A.diagonal(1)
    ab[1] = A.diagonal(0)
    ab[2, :-1] = A.diagonal(-1)
    return scipy.linalg.solve_banded((1, 1), ab, b)


def pcg(A: sp.spmatrix, b: np.ndarray, tol: float, maxiter: int, x0: np.ndarray | None = None):
    """Jacobi-preconditioned conjugate gradients with an L-infinity stopping rule."""
    inv_diag = 1.0 / A.diagonal()
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - A @ x
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    it = 0
    while np.max(np.abs(r)) > tol and it < maxiter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        it += 1
        if it % 50 == 0:
            # refresh against drift of the recursive residual
            r = b - A @ x
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, it


def solve_spd(A: sp.spmatrix, b: np.ndarray, tol: float, dim: int, maxiter: int | None = None, x0=None):
    """Solve an SPD system: direct in 1D, preconditioned CG otherwise.

    Returns ``(x, SolveReport)``; the effective tolerance is never below the
    rounding floor of the residual evaluation.
    """
    A = A if sp.isspmatrix_csr(A) else sp.csr_matrix(A)
    n = A.shape[0]
    if dim == 1:
        if A.nnz <= 3 * n and all(abs(k) <= 1 for k in _band_offsets(A)):
            x = _tridiagonal_solve(A, b)
        else:
            x = spla.splu(A.tocsc()).solve(b)
        iters = 1
    else:
        maxiter = maxiter if maxiter is not None else 50 * int(round(np.sqrt(n)))
        x, iters = pcg(A, b, tol, maxiter, x0)
    floor = rounding_floor(A, x, b)
    eff = max(tol, floor)
    res = float(np.max(np.abs(A @ x - b)))
    if res > eff and dim != 1:
        # one more sweep against the raised tolerance
        x, extra = pcg(A, b, eff, maxiter, x)
        iters += extra
        res = float(np.max(np.abs(A @ x - b)))
    return x, SolveReport(iters, res, res <= eff, eff)


def _band_offsets(A: sp.csr_matrix):
    rows = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr))
    return np.unique(A.indices - rows)


def solve_elliptic(p: LinearEllipticProblem, tol: float = 1e-10) -> tuple[np.ndarray, SolveReport]:
    if not tol > 0:
        raise ValueError("tol must be positive")
    A = p.matrix()
    b = p.load()
    grid = p.grid
    maxiter = 50 * max(grid.cells) if grid.dim > 1 else None
    x, report = solve_spd(A, b, tol, grid.dim, maxiter=maxiter)
    u = x.reshape(grid.shape)
    res = float(np.max(np.abs(p.residual(u))))
    eff = max(report.tolerance, rounding_floor(A, x, b))
    report = SolveReport(report.iterations, res, res <= eff, eff)
    if not report.converged:
        logger.warning("elliptic solve stopped at residual %.3e (tol %.3e)", res, eff)
    return u, report


def solve_poisson(eps: float, rho: np.ndarray, W: BoundaryData) -> np.ndarray:
    """Solve -eps*Lap(phi) = rho with Dirichlet data W."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    rho = np.asarray(rho, dtype=float)
    tol = 1e-11 * max(1.0, float(np.max(np.abs(rho))))
    phi, report = solve_elliptic(LinearEllipticProblem(W.grid, eps, 0.0, rho, W), tol)
    if not report.converged:
        raise SolverError(f"Poisson solve failed: residual {report.residual:.3e}")
    return phi
