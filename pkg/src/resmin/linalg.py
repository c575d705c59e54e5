"""Sparse direct solves for the Gram, square and saddle-point systems.

Everything goes through SuperLU (``scipy.sparse.linalg.splu``).  After each
solve the residual is checked, with a few steps of iterative refinement if
the first answer is not accurate enough.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

ORDERING = "COLAMD"
SPD_ORDERING = "MMD_AT_PLUS_A"


class SolverError(RuntimeError):
    """Factorization breakdown or a solve that misses its residual target."""


@dataclass(frozen=True, eq=False)
class SaddleSystem:
    """``[[G, B], [B^T, C]] [eps; u] = [rhs; rhs_coarse]`` with ``C = 0``
    unless given."""

    G: sp.spmatrix
    B: sp.spmatrix
    rhs: np.ndarray
    rhs_coarse: np.ndarray | None = None
    C: sp.spmatrix | None = None

    def __post_init__(self):
        n, m = self.B.shape
        if self.G.shape != (n, n) or len(self.rhs) != n:
            raise ValueError("inconsistent saddle-point block sizes")
        if self.rhs_coarse is not None and len(self.rhs_coarse) != m:
            raise ValueError("inconsistent saddle-point block sizes")
        if self.C is not None and self.C.shape != (m, m):
            raise ValueError("inconsistent saddle-point block sizes")

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.G, self.B], [self.B.T, self.C]], format="csc")

    def vector(self) -> np.ndarray:
        m = self.B.shape[1]
        rc = np.zeros(m) if self.rhs_coarse is None else np.asarray(self.rhs_coarse, dtype=float)
        return np.concatenate([np.asarray(self.rhs, dtype=float), rc])


class Factorization:
    """LU factors of a sparse square matrix with a checked ``solve``."""

    def __init__(self, A, tol=1e-9, ordering=ORDERING, context=""):
        self.A = sp.csc_matrix(A, dtype=float)
        if self.A.shape[0] != self.A.shape[1]:
            raise ValueError("matrix is not square")
        self.tol = tol
        self.context = context
        try:
            self.lu = spla.splu(self.A, permc_spec=ordering)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed{_where(context)}: {exc}") from exc
        self._norm = spla.norm(self.A, np.inf) if self.A.nnz else 0.0

    def solve(self, b, refine=3):
        b = np.asarray(b, dtype=float)
        if not np.all(np.isfinite(b)):
            raise SolverError(f"non-finite right-hand side{_where(self.context)}")
        x = self.lu.solve(b)
        for _ in range(refine + 1):
            if not np.all(np.isfinite(x)):
                raise SolverError(f"singular system{_where(self.context)}")
            r = b - self.A @ x
            scale = np.abs(b).max(initial=0.0) + self._norm * np.abs(x).max(initial=0.0)
            if np.abs(r).max(initial=0.0) <= self.tol * max(scale, 1e-300):
                return x
            x = x + self.lu.solve(r)
        raise SolverError(f"residual check failed{_where(self.context)}: |r| = {np.abs(r).max():.3e}")


def _where(context):
    return f" ({context})" if context else ""


def factorize(A, tol=1e-9, context="") -> Factorization:
    return Factorization(A, tol=tol, context=context)


def solve_square(A, b, tol=1e-9, context="") -> np.ndarray:
    return Factorization(A, tol=tol, context=context).solve(b)


def solve_spd(G, b, tol=1e-10, context="") -> np.ndarray:
    """Solve with a symmetric positive-definite matrix.

    Uses a symmetric-mode LU without pivoting; a non-positive pivot means
    the matrix is not positive definite.
    """
    G = sp.csc_matrix(G, dtype=float)
    try:
        lu = spla.splu(G, permc_spec=SPD_ORDERING, diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise SolverError(f"factorization failed{_where(context)}: {exc}") from exc
    if np.any(lu.U.diagonal() <= 0):
        raise SolverError(f"matrix is not positive definite{_where(context)}")
    b = np.asarray(b, dtype=float)
    x = lu.solve(b)
    r = b - G @ x
    x = x + lu.solve(r)
    r = b - G @ x
    if np.abs(r).max(initial=0.0) > tol * (np.abs(b).max(initial=0.0) + 1.0):
        raise SolverError(f"residual check failed{_where(context)}")
    return x


def solve_saddle(system: SaddleSystem, tol=1e-9, context=""):
    """Return ``(eps, u)`` solving the block system."""
    n = system.G.shape[0]
    x = Factorization(system.matrix(), tol=tol, context=context).solve(system.vector())
    return x[:n], x[n:]
