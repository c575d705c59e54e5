"""Residual minimization solves and scale reconstructions.

A :class:`Discretization` bundles the spaces and assembled operators of one
mesh level.  The coarse solution lives in the continuous space and is
obtained, together with the residual representative ``eps``, from

    [[G, B E], [(B E)^T, 0]] [eps; ubar] = [l; 0].

The fine-scale correction solves ``B u_fine = G eps`` and the adjoint
reconstruction solves ``B u_adj = G eps + B^T eps``.  For nonlinear problems
``B`` is replaced by the Jacobian at the coarse solution and the saddle
problem is solved with damped Newton.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import forms
from .fem import BROKEN, CONFORMING, build_space, cg_embedding, interpolate
from .linalg import Factorization, SaddleSystem, SolverError, solve_saddle
from .mesh import Mesh

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-6
    max_iter: int = 50
    min_step: float = 2.0**-10
    # switch from Gauss-Newton to full Newton once a full Gauss-Newton step
    # reduces the merit by less than this fraction
    second_order: bool = True
    switch_ratio: float = 0.1

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("Newton tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if not 0 < self.min_step <= 1:
            raise ValueError("min_step must lie in (0, 1]")


class NewtonError(SolverError):
    pass


class Discretization:
    """Spaces and level operators for one mesh.

    Parameters
    ----------
    mesh, problem, degree
        Mesh, problem data and polynomial degree.
    norm, diffusion_term
        Passed to :func:`resmin.forms.gram_blocks`.
    """

    def __init__(self, mesh: Mesh, problem: forms.ProblemDef, degree: int, norm=None, diffusion_term="literal",
                 frozen_dissipation=False):
        self.mesh = mesh
        self.problem = problem
        self.degree = degree
        self.gram_norm = norm or ("convective" if problem.nonlinear else "advective")
        self.diffusion_term = diffusion_term
        self.broken = build_space(mesh, degree, BROKEN)
        self.conforming = build_space(mesh, degree, CONFORMING)
        self.E = cg_embedding(self.conforming, self.broken)
        self.kappa = forms.cell_kappa(self.broken, problem)
        self.gram = forms.gram_blocks(self.broken, problem, self.kappa, self.gram_norm, diffusion_term)
        self.G = self.gram.matrix()
        if problem.nonlinear:
            self.form = forms.NonlinearForm(self.broken, problem, frozen_dissipation)
            self.B = None
            self.load = self.form.load
        else:
            self.form = None
            self.B = (forms.assemble_swip(self.broken, problem, self.kappa) + forms.assemble_upwind(self.broken, problem)).tocsr()
            self.load = forms.assemble_rhs(self.broken, problem, self.kappa)
        self._factor = None

    @property
    def num_dofs(self) -> int:
        """dim of the continuous trial space plus dim of the broken space."""
        return self.conforming.num_dofs + self.broken.num_dofs

    def norm(self, x) -> float:
        return float(np.sqrt(max(x @ (self.G @ x), 0.0)))

    def factor(self) -> Factorization:
        if self.B is None:
            raise ValueError("nonlinear discretization has no fixed operator")
        if self._factor is None:
            self._factor = Factorization(self.B, context=self._context())
        return self._factor

    def _context(self):
        return f"{self.problem.name or 'problem'}, level {self.mesh.level}, p={self.degree}"


@dataclass(eq=False)
class ScaleSolutions:
    """Coefficient vectors of one level.  ``coarse`` is in the continuous
    space; every other field is a broken-space vector."""

    disc: Discretization
    eps: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray | None = None
    adjoint: np.ndarray | None = None
    theta: np.ndarray | None = None
    newton_iters: int | None = None
    info: dict = field(default_factory=dict)

    @property
    def coarse_broken(self) -> np.ndarray:
        return self.disc.E @ self.coarse

    @property
    def full(self) -> np.ndarray | None:
        return None if self.fine is None else self.coarse_broken + self.fine

    @property
    def adjoint_full(self) -> np.ndarray | None:
        return None if self.adjoint is None else self.coarse_broken + self.adjoint

    @property
    def estimate(self) -> float:
        return self.disc.norm(self.eps)


# ---------------------------------------------------------------------------
# linear


def reconstruct_fine(G, B, eps, factor: Factorization | None = None) -> np.ndarray:
    """Fine-scale correction: ``B u = G eps``."""
    factor = Factorization(B) if factor is None else factor
    return factor.solve(G @ eps)


def reconstruct_adjoint(G, B, eps, factor: Factorization | None = None) -> np.ndarray:
    """Adjoint reconstruction: ``B u = G eps + B^T eps``."""
    factor = Factorization(B) if factor is None else factor
    return factor.solve(G @ eps + B.T @ eps)


def solve_dg_reference(B, load, factor: Factorization | None = None) -> np.ndarray:
    factor = Factorization(B) if factor is None else factor
    return factor.solve(load)


def solve_linear_resmin(mesh_or_disc, problem=None, degree=None, reconstruct=True, dg_reference=True) -> ScaleSolutions:
    """Coarse solution and residual representative of a linear problem.

    Accepts either a :class:`Discretization` or ``(mesh, problem, degree)``.
    With ``reconstruct`` the fine and adjoint corrections are added; with
    ``dg_reference`` the plain dG solution as well.
    """
    disc = _as_disc(mesh_or_disc, problem, degree)
    if disc.problem.nonlinear:
        raise ValueError("problem is nonlinear; use solve_nonlinear_resmin")
    BE = (disc.B @ disc.E).tocsr()
    eps, coarse = solve_saddle(SaddleSystem(disc.G, BE, disc.load), context=disc._context())
    sol = ScaleSolutions(disc, eps, coarse)
    if reconstruct:
        f = disc.factor()
        sol.fine = reconstruct_fine(disc.G, disc.B, eps, f)
        sol.adjoint = reconstruct_adjoint(disc.G, disc.B, eps, f)
    if dg_reference:
        sol.theta = solve_dg_reference(disc.B, disc.load, disc.factor())
    return sol


def _as_disc(mesh_or_disc, problem, degree):
    if isinstance(mesh_or_disc, Discretization):
        return mesh_or_disc
    if problem is None or degree is None:
        raise TypeError("problem and degree are required with a mesh")
    return Discretization(mesh_or_disc, problem, degree)


# ---------------------------------------------------------------------------
# nonlinear


def _coarse_guess(disc, initial):
    V = disc.conforming
    if initial is None:
        return np.zeros(V.num_dofs)
    if callable(initial):
        return interpolate(initial, V)
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (V.num_dofs,):
        raise ValueError("initial guess does not match the continuous space")
    return initial.copy()


class _Merit:
    """``0.5 |eps|_G^2`` with ``eps = -G^{-1} residual(E u)``."""

    def __init__(self, disc):
        self.disc = disc
        self.G = Factorization(disc.G, tol=1e-10, context=disc._context())

    def __call__(self, coarse):
        r = self.disc.form.residual(self.disc.E @ coarse)
        eps = -self.G.solve(r)
        return -0.5 * float(r @ eps), eps


def _line_search(merit, coarse, step, slope, value, config):
    # Armijo backtracking; the last term absorbs roundoff once converged
    k = 1.0
    while k >= config.min_step:
        try:
            new, eps = merit(coarse + k * step)
        except FloatingPointError:
            new = np.inf
        if new <= value + 1e-4 * k * slope + 1e-13 * abs(value):
            return k, new, eps
        k *= 0.5
    return None


def solve_nonlinear_resmin(mesh_or_disc, problem=None, degree=None, config: NewtonConfig | None = None, initial=None,
                           reconstruct=True, dg_reference=False) -> ScaleSolutions:
    """Damped Newton for the nonlinear saddle problem.

    ``initial`` is a callable, a continuous-space coefficient vector or
    ``None`` (zero).  Each iteration solves

        [[G, J E], [(J E)^T, C]] [d_eps; d_u] = [0; -(J E)^T eps]

    with ``C = 0`` (Gauss-Newton) or ``C = E^T H E`` where ``H`` is the
    second derivative of ``eps . residual`` (full Newton, used once Gauss-Newton
    steps are accepted without damping and progress slows down, and only
    while it gives a descent direction).  The step length starts at 1 and is
    halved until ``0.5 |eps|_G^2`` decreases sufficiently; ``eps`` is then
    recomputed from the residual so the first block holds exactly.
    Convergence is declared when the coarse increment is below
    ``config.tol`` in the dG energy norm.
    """
    disc = _as_disc(mesh_or_disc, problem, degree)
    if not disc.problem.nonlinear:
        raise ValueError("problem is linear; use solve_nonlinear_resmin only for conservation laws")
    config = config or NewtonConfig()
    E = disc.E
    merit = _Merit(disc)
    coarse = _coarse_guess(disc, initial)
    value, eps = merit(coarse)
    zero = np.zeros(len(eps))
    newton = False
    history = []
    for it in range(1, config.max_iter + 1):
        JE = (disc.form.jacobian(E @ coarse) @ E).tocsr()
        grad = -(JE.T @ eps)
        found = None
        if newton:
            C = (E.T @ disc.form.hessian(E @ coarse, eps) @ E).tocsr()
            _, step = solve_saddle(SaddleSystem(disc.G, JE, zero, grad, C), context=disc._context())
            slope = float(grad @ step)
            if slope < 0:
                found = _line_search(merit, coarse, step, slope, value, config)
        if found is None:
            newton = False
            _, step = solve_saddle(SaddleSystem(disc.G, JE, zero, grad), context=disc._context())
            slope = float(grad @ step)
            found = _line_search(merit, coarse, step, slope, value, config)
            if found is None:
                raise NewtonError(f"line search failed at iteration {it} ({disc._context()})")
        k, new_value, eps = found
        step_norm = disc.norm(E @ step)
        if config.second_order and disc.problem.d2flux is not None and k == 1.0:
            newton = newton or value - new_value <= config.switch_ratio * value
        else:
            newton = False
        coarse = coarse + k * step
        value = new_value
        history.append((step_norm, k, value))
        log.debug("newton %d: |du| = %.3e, k = %g, merit = %.6e", it, step_norm, k, value)
        if step_norm < config.tol:
            break
    else:
        raise NewtonError(f"no convergence in {config.max_iter} iterations ({disc._context()})")

    sol = ScaleSolutions(disc, eps, coarse, newton_iters=it, info={"newton": history})
    if reconstruct:
        J = disc.form.jacobian(E @ coarse)
        factor = Factorization(J, context=disc._context())
        sol.fine = reconstruct_fine(disc.G, J, eps, factor)
        sol.adjoint = reconstruct_adjoint(disc.G, J, eps, factor)
    if dg_reference:
        sol.theta = solve_nonlinear_dg(disc, config, sol.full if sol.full is not None else E @ coarse)
    return sol


def solve_nonlinear_dg(disc: Discretization, config: NewtonConfig | None = None, initial=None) -> np.ndarray:
    """Damped Newton for the plain dG problem ``residual(u) = 0``."""
    config = config or NewtonConfig()
    u = np.zeros(disc.broken.num_dofs) if initial is None else np.array(initial, dtype=float)
    R = disc.form.residual(u)
    for it in range(1, config.max_iter + 1):
        du = Factorization(disc.form.jacobian(u), context=disc._context()).solve(-R)
        step_norm = disc.norm(du)
        if step_norm < config.tol:
            return u + du
        norm0 = np.linalg.norm(R)
        k = 1.0
        while True:
            try:
                R_new = disc.form.residual(u + k * du)
                ok = np.linalg.norm(R_new) <= norm0
            except FloatingPointError:
                ok = False
            if ok:
                break
            k *= 0.5
            if k < config.min_step:
                raise NewtonError(f"dG line search failed at iteration {it} ({disc._context()})")
        u, R = u + k * du, R_new
    raise NewtonError(f"dG Newton: no convergence in {config.max_iter} iterations ({disc._context()})")


def galerkin_orthogonality(sol: ScaleSolutions) -> float:
    """``max |b(eps, w)|`` over the continuous basis."""
    disc = sol.disc
    if disc.B is not None:
        op = disc.B
    else:
        op = disc.form.jacobian(sol.coarse_broken)
    return float(np.abs((op @ disc.E).T @ sol.eps).max(initial=0.0))
