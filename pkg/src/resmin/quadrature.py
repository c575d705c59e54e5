"""Quadrature on the reference triangle and the unit interval."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True, eq=False)
class Quadrature:
    """Points and weights of a rule exact for polynomials up to ``degree``.

    Triangle points are reference coordinates on (0,0), (1,0), (0,1) and the
    weights sum to 1/2.  Edge points live on [0, 1] with weights summing to 1.
    """

    points: np.ndarray
    weights: np.ndarray
    degree: int


@lru_cache(maxsize=None)
def quadrature_rule(entity: str, degree: int) -> Quadrature:
    if degree < 0:
        raise ValueError("quadrature degree must be non-negative")
    if entity == "edge":
        n = max(1, (degree + 2) // 2)
        x, w = np.polynomial.legendre.leggauss(n)
        pts, wts = 0.5 * (x + 1.0), 0.5 * w
    elif entity == "triangle":
        pts, wts = _triangle(degree)
    else:
        raise ValueError(f"unknown entity {entity!r}")
    pts.flags.writeable = False
    wts.flags.writeable = False
    return Quadrature(pts, wts, degree)


def _triangle(degree):
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        return np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]]), np.full(3, 1 / 6)
    # collapsed (Duffy) tensor rule: Gauss-Jacobi(1,0) absorbs the 1-s Jacobian
    n = (degree + 2) // 2
    zs, ws = roots_jacobi(n, 1.0, 0.0)
    zt, wt = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (1.0 + zs)
    t = 0.5 * (1.0 + zt)
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws / 4.0, wt / 2.0)
    pts = np.stack([S.ravel(), (T * (1.0 - S)).ravel()], axis=1)
    return pts, W.ravel()
