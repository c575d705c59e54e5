"""Error localisation, bulk-chasing marking and the adaptive driver."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .fem import prolongate
from .linalg import SolverError
from .mesh import Mesh, refine
from .problems import Benchmark, compute_errors
from .solver import (
    Discretization,
    NewtonConfig,
    NewtonError,
    ScaleSolutions,
    solve_linear_resmin,
    solve_nonlinear_dg,
    solve_nonlinear_resmin,
)

log = logging.getLogger(__name__)


def localize_estimator(sol: ScaleSolutions) -> np.ndarray:
    """Squared error indicator per cell.

    Volume terms of ``|eps|^2`` go to their cell, each interior-face term is
    split equally between the two neighbours and boundary-face terms go to
    the adjacent cell, so the indicators sum to the squared estimate.
    """
    gram = sol.disc.gram
    cell, interior, boundary = gram.quadratic_terms(sol.eps)
    nc = len(cell)
    eta2 = cell.copy()
    fi = gram.interior_values.cells
    eta2 += np.bincount(fi[:, 0], weights=0.5 * interior, minlength=nc)
    eta2 += np.bincount(fi[:, 1], weights=0.5 * interior, minlength=nc)
    eta2 += np.bincount(gram.boundary_values.cells[:, 0], weights=boundary, minlength=nc)
    # rounding can leave tiny negative values for an SPD form
    return np.maximum(eta2, 0.0)


def dorfler_mark(eta2, fraction: float = 0.25) -> np.ndarray:
    """Smallest set of cells, largest indicators first, carrying at least
    ``fraction`` of the total.  Ties go to the lower cell index."""
    if not 0.0 < fraction <= 1.0:
        raise ValueError("marking fraction must lie in (0, 1]")
    eta2 = np.asarray(eta2, dtype=float)
    if np.any(eta2 < 0) or not np.all(np.isfinite(eta2)):
        raise ValueError("indicators must be finite and non-negative")
    order = np.argsort(-eta2, kind="stable")
    csum = np.cumsum(eta2[order])
    if len(csum) == 0 or csum[-1] == 0.0:
        return np.zeros(0, dtype=np.int64)
    n = int(np.searchsorted(csum, fraction * csum[-1], side="left")) + 1
    return np.sort(order[:n])


def convergence_rate(dofs, errors, last: int = 5) -> float:
    """Decay rate ``-d log(err) / d log(dofs^(1/2))`` fitted by least squares
    over the final ``last`` levels."""
    dofs = np.asarray(dofs, dtype=float)[-last:]
    errors = np.asarray(errors, dtype=float)[-last:]
    if len(dofs) < 2:
        raise ValueError("need at least two levels")
    slope = np.polyfit(0.5 * np.log(dofs), np.log(errors), 1)[0]
    return float(-slope)


@dataclass
class ConvergenceRecord:
    level: int
    dofs: int
    estimate: float
    num_cells: int
    errors: dict = field(default_factory=dict)
    newton_iters: int | None = None
    indicator_sum: float = 0.0
    seconds: float = 0.0


@dataclass
class AdaptiveResult:
    records: list
    solution: ScaleSolutions
    meshes: list

    def series(self, key: str) -> np.ndarray:
        """Column of the records: ``'dofs'``, ``'estimate'`` or an error key
        such as ``'Vh_coarse'``."""
        if key in ("dofs", "estimate", "level", "num_cells", "newton_iters"):
            return np.array([getattr(r, key) for r in self.records], dtype=float)
        return np.array([r.errors.get(key, np.nan) for r in self.records], dtype=float)

    def rate(self, key: str, last: int = 5) -> float:
        return convergence_rate(self.series("dofs"), self.series(key), last)


def adaptive_loop(
    benchmark: Benchmark,
    degree: int,
    levels: int,
    eta_ref: float | None = None,
    mesh: Mesh | None = None,
    newton: NewtonConfig | None = None,
    errors: bool = True,
    dg_reference: bool = True,
    on_level: Callable[[ScaleSolutions, ConvergenceRecord], None] | None = None,
    **disc_options,
) -> AdaptiveResult:
    """SOLVE, ESTIMATE, MARK and REFINE for ``levels`` levels.

    Nonlinear problems start from the benchmark's initial guess and from
    the prolongated coarse solution afterwards.  ``on_level`` is called with
    the solution and record of every level.  The loop stops early if the
    estimate vanishes.
    """
    if levels < 1:
        raise ValueError("levels must be at least 1")
    problem = benchmark.problem
    eta_ref = benchmark.eta_ref if eta_ref is None else eta_ref
    if not 0.0 < eta_ref <= 1.0:
        raise ValueError("marking fraction must lie in (0, 1]")
    mesh = benchmark.initial_mesh() if mesh is None else mesh
    errors = errors and benchmark.has_exact
    guess = benchmark.initial_guess
    records, meshes = [], []
    sol = None
    for level in range(levels):
        t0 = time.perf_counter()
        disc = Discretization(mesh, problem, degree, **disc_options)
        try:
            if problem.nonlinear:
                if sol is not None:
                    guess = prolongate(sol.coarse, sol.disc.conforming, disc.conforming)
                sol = solve_nonlinear_resmin(disc, config=newton, initial=guess)
                if dg_reference:
                    try:
                        sol.theta = solve_nonlinear_dg(disc, newton, sol.full)
                    except NewtonError as exc:
                        log.warning("dG reference skipped: %s", exc)
                        sol.info["dg_error"] = str(exc)
            else:
                sol = solve_linear_resmin(disc, dg_reference=dg_reference)
        except SolverError as exc:
            raise SolverError(f"level {level}: {exc}") from exc
        eta2 = localize_estimator(sol)
        rec = ConvergenceRecord(
            level=level,
            dofs=disc.num_dofs,
            estimate=sol.estimate,
            num_cells=mesh.num_cells,
            newton_iters=sol.newton_iters,
            indicator_sum=float(eta2.sum()),
        )
        if errors:
            rec.errors = compute_errors(sol, benchmark)
        rec.seconds = time.perf_counter() - t0
        records.append(rec)
        meshes.append(mesh)
        log.info("level %d: dofs %d, estimate %.4e", level, rec.dofs, rec.estimate)
        if on_level is not None:
            on_level(sol, rec)
        if level == levels - 1:
            break
        marked = dorfler_mark(eta2, eta_ref)
        if len(marked) == 0:
            break
        mesh = refine(mesh, marked)
    return AdaptiveResult(records, sol, meshes)
