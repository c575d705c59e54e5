"""Discrete forms on the broken space: SWIP diffusion, upwind advection, the
inner product of the dG energy norm, load vectors and the Lax-Friedrichs
nonlinear convection form with its derivative.

All assembly works on cell-local and face-local blocks that are scattered
into ``scipy.sparse`` CSR matrices.  The diffusion tensor is sampled once
per cell at the centroid, so piecewise-constant coefficients aligned with
the mesh are represented exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from .fem import FaceValues, FunctionSpace

DIRICHLET = "dirichlet"
NEUMANN = "neumann"


@dataclass(frozen=True, eq=False)
class ProblemDef:
    """Coefficients and data of a steady advection-diffusion problem or a
    scalar conservation law ``div(flux(u) - kappa grad u) = f``.

    Every callable is vectorised over a trailing coordinate axis: it receives
    ``x`` of shape ``(..., 2)`` and returns ``(...)`` (scalars), ``(..., 2)``
    (vectors) or ``(..., 2, 2)`` (``kappa``).  Flux callables receive state
    values of shape ``(...)``.
    """

    kappa: Callable
    boundary: Mapping[str, str]
    beta: Callable | None = None
    source: Callable | None = None
    dirichlet: Callable | None = None
    neumann: Callable | None = None
    flux: Callable | None = None
    dflux: Callable | None = None
    d2flux: Callable | None = None
    exact: Callable | None = None
    exact_grad: Callable | None = None
    name: str = ""
    metadata: dict = field(default_factory=dict)

    @property
    def nonlinear(self) -> bool:
        return self.flux is not None


def constant_tensor(k) -> Callable:
    """Callable returning a constant (scalar or 2x2) diffusion tensor."""
    K = np.asarray(k, dtype=float)
    if K.ndim == 0:
        K = K * np.eye(2)

    def kappa(x):
        return np.broadcast_to(K, np.shape(x)[:-1] + (2, 2))

    return kappa


def constant_vector(b) -> Callable:
    b = np.asarray(b, dtype=float)

    def beta(x):
        return np.broadcast_to(b, np.shape(x))

    return beta


def cell_kappa(space: FunctionSpace, problem: ProblemDef) -> np.ndarray:
    """Diffusion tensor per cell, shape (nc, 2, 2), sampled at centroids."""
    K = np.array(problem.kappa(space.mesh.centroids), dtype=float)
    if np.abs(K - K.transpose(0, 2, 1)).max() > 1e-12 * max(np.abs(K).max(), 1e-300):
        raise ValueError("diffusion tensor is not symmetric")
    # zero is allowed (pure convection); negative definite is not
    if np.linalg.eigvalsh(K).min() < 0:
        raise ValueError("diffusion tensor is not positive semi-definite")
    return K


def boundary_kinds(space: FunctionSpace, problem: ProblemDef, fv: FaceValues) -> np.ndarray:
    """``DIRICHLET``/``NEUMANN`` label for each boundary face in ``fv``."""
    tags = space.mesh.faces.tags
    out = []
    for f in fv.faces:
        try:
            kind = problem.boundary[tags[f]]
        except KeyError:
            raise ValueError(f"boundary tag {tags[f]!r} has no condition") from None
        if kind not in (DIRICHLET, NEUMANN):
            raise ValueError(f"unknown boundary condition {kind!r}")
        out.append(kind)
    return np.array(out, dtype=object)


# ---------------------------------------------------------------------------
# penalty and weights


def diffusion_weights(kappa1, kappa2, normal):
    """Diffusion-weighted averages across a face.

    Returns ``(w1, w2, gamma)`` with ``w_i = delta_i / (delta_1 + delta_2)``
    and ``gamma = 2 delta_1 delta_2 / (delta_1 + delta_2)`` where
    ``delta_i = n . kappa_i n``.  Scalars are accepted for ``kappa_i``.
    """
    n = np.asarray(normal, dtype=float)
    k1 = np.asarray(kappa1, dtype=float)
    k2 = np.asarray(kappa2, dtype=float)
    d1 = _normal_diffusivity(k1, n)
    d2 = _normal_diffusivity(k2, n)
    if np.any(d1 <= 0) or np.any(d2 <= 0):
        raise ValueError("normal diffusivity must be positive")
    s = d1 + d2
    return d1 / s, d2 / s, 2.0 * d1 * d2 / s


def _normal_diffusivity(k, n):
    if k.ndim == 0 or (k.ndim >= 1 and k.shape[-2:] != (2, 2)):
        return k * np.einsum("...i,...i->...", n, n)
    return np.einsum("...i,...ij,...j->...", n, k, n)


def _safe_weights(k1, k2, n):
    # zero diffusion on both sides: weights are irrelevant, gamma is zero
    d1 = _normal_diffusivity(k1, n)
    d2 = _normal_diffusivity(k2, n)
    s = d1 + d2
    ok = s > 0
    ss = np.where(ok, s, 1.0)
    w1 = np.where(ok, d1 / ss, 0.5)
    return w1, 1.0 - w1, np.where(ok, 2.0 * d1 * d2 / ss, 0.0)


def penalty_eta_e(geometry, p: int, d: int = 2) -> float:
    """Penalty for a face given ``[(area, perimeter), ...]`` of its one or two
    incident cells."""
    factor = (p + 1) * (p + d) / d
    ratios = [perim / area for area, perim in geometry]
    if len(ratios) == 1:
        return factor * ratios[0]
    if len(ratios) == 2:
        return factor * 0.5 * (ratios[0] + ratios[1])
    raise ValueError("a face has one or two incident cells")


def face_penalties(space: FunctionSpace, fv: FaceValues) -> np.ndarray:
    mesh = space.mesh
    p, d = space.degree, 2
    ratio = mesh.perimeters / mesh.areas
    return (p + 1) * (p + d) / d * ratio[fv.cells].mean(axis=1)


# ---------------------------------------------------------------------------
# block helpers


def _outer(w, a, b):
    return np.einsum("fq,fqi,fqj->fij", w, a, b, optimize=True)


def _pair(x):
    """Concatenate the two sides of interior-face data along the dof axis."""
    return np.concatenate([x[:, 0], x[:, 1]], axis=-1)


def _jump(fv):
    return np.concatenate([fv.phi[:, 0], -fv.phi[:, 1]], axis=-1)


def _average(fv):
    return 0.5 * _pair(fv.phi)


def _normal_flux(fv, kappa):
    """``kappa grad(phi) . n`` per side, shape (n, sides, nq, nloc)."""
    kn = np.einsum("fsij,fj->fsi", kappa[fv.cells], fv.normals)
    return np.einsum("fsqni,fsi->fsqn", fv.grad, kn)


def _face_dofs(space, fv):
    return np.concatenate([space.dof_map[fv.cells[:, s]] for s in range(fv.cells.shape[1])], axis=1)


def _scatter(n_rows, n_cols, blocks, row_dofs, col_dofs=None):
    if col_dofs is None:
        col_dofs = row_dofs
    r = np.broadcast_to(row_dofs[:, :, None], blocks.shape).ravel()
    c = np.broadcast_to(col_dofs[:, None, :], blocks.shape).ravel()
    return sp.csr_matrix((blocks.ravel(), (r, c)), shape=(n_rows, n_cols))


def _scatter_vector(n, values, dofs):
    return np.bincount(dofs.ravel(), weights=values.ravel(), minlength=n)


@dataclass(frozen=True, eq=False)
class LocalBlocks:
    """Cell, interior-face and boundary-face contributions of a symmetric
    form, kept separately so they can be localised per cell."""

    space: FunctionSpace
    cell: np.ndarray  # (nc, nloc, nloc)
    interior: np.ndarray  # (nfi, 2 nloc, 2 nloc)
    boundary: np.ndarray  # (nfb, nloc, nloc)
    interior_values: FaceValues
    boundary_values: FaceValues

    def matrix(self) -> sp.csr_matrix:
        V = self.space
        n = V.num_dofs
        A = _scatter(n, n, self.cell, V.dof_map)
        if len(self.interior_values):
            A = A + _scatter(n, n, self.interior, _face_dofs(V, self.interior_values))
        if len(self.boundary_values):
            A = A + _scatter(n, n, self.boundary, _face_dofs(V, self.boundary_values))
        return A.tocsr()

    def quadratic_terms(self, x):
        """Per-cell, per-interior-face and per-boundary-face values of the
        quadratic form at ``x``."""
        V = self.space
        xc = x[V.dof_map]
        cell = np.einsum("cn,cnm,cm->c", xc, self.cell, xc)
        xi = x[_face_dofs(V, self.interior_values)]
        interior = np.einsum("fn,fnm,fm->f", xi, self.interior, xi)
        xb = x[_face_dofs(V, self.boundary_values)]
        boundary = np.einsum("fn,fnm,fm->f", xb, self.boundary, xb)
        return cell, interior, boundary


def _empty_blocks(space, fvi, fvb):
    nloc = space.num_local
    return (
        np.zeros((space.mesh.num_cells, nloc, nloc)),
        np.zeros((len(fvi), 2 * nloc, 2 * nloc)),
        np.zeros((len(fvb), nloc, nloc)),
    )


# ---------------------------------------------------------------------------
# bilinear forms


def swip_blocks(space: FunctionSpace, problem: ProblemDef, kappa=None) -> LocalBlocks:
    kappa = cell_kappa(space, problem) if kappa is None else kappa
    cv = space.cell_values()
    fvi = space.face_values("interior")
    fvb = space.face_values("boundary")
    cell, interior, boundary = _empty_blocks(space, fvi, fvb)

    cell += np.einsum("cq,cqni,cij,cqmj->cnm", cv.weights, cv.grad, kappa, cv.grad, optimize=True)

    if len(fvi):
        w1, w2, gamma = _safe_weights(kappa[fvi.cells[:, 0]], kappa[fvi.cells[:, 1]], fvi.normals)
        flux = _normal_flux(fvi, kappa)
        avg_flux = np.concatenate([w1[:, None, None] * flux[:, 0], w2[:, None, None] * flux[:, 1]], axis=-1)
        jump = _jump(fvi)
        eta = face_penalties(space, fvi) * gamma
        interior += -_outer(fvi.weights, jump, avg_flux) - _outer(fvi.weights, avg_flux, jump)
        interior += _outer(eta[:, None] * fvi.weights, jump, jump)

    kinds = boundary_kinds(space, problem, fvb)
    dmask = kinds == DIRICHLET
    if dmask.any():
        k = kappa[fvb.cells[:, 0]]
        delta = _normal_diffusivity(k, fvb.normals)
        flux = _normal_flux(fvb, kappa)[:, 0]
        phi = fvb.phi[:, 0]
        eta = face_penalties(space, fvb) * delta
        w = fvb.weights * dmask[:, None]
        boundary += -_outer(w, phi, flux) - _outer(w, flux, phi) + _outer(eta[:, None] * w, phi, phi)
    return LocalBlocks(space, cell, interior, boundary, fvi, fvb)


def assemble_swip(space: FunctionSpace, problem: ProblemDef, kappa=None) -> sp.csr_matrix:
    """Symmetric weighted interior penalty form; rows are test dofs."""
    return swip_blocks(space, problem, kappa).matrix()


def _beta(problem, x):
    return np.asarray(problem.beta(x), dtype=float)


def assemble_upwind(space: FunctionSpace, problem: ProblemDef) -> sp.csr_matrix:
    """Upwind advection form (test rows, trial columns)."""
    n = space.num_dofs
    if problem.beta is None:
        return sp.csr_matrix((n, n))
    cv = space.cell_values()
    fvi = space.face_values("interior")
    fvb = space.face_values("boundary")

    bg = np.einsum("cqmi,cqi->cqm", cv.grad, _beta(problem, cv.points))
    A = _scatter(n, n, np.einsum("cq,qn,cqm->cnm", cv.weights, cv.phi, bg), space.dof_map)

    if len(fvi):
        bn = np.einsum("fqi,fi->fq", _beta(problem, fvi.points), fvi.normals)
        jump, avg = _jump(fvi), _average(fvi)
        blocks = _outer(0.5 * np.abs(bn) * fvi.weights, jump, jump) - _outer(bn * fvi.weights, avg, jump)
        A = A + _scatter(n, n, blocks, _face_dofs(space, fvi))

    if len(fvb):
        bn = np.einsum("fqi,fi->fq", _beta(problem, fvb.points), fvb.normals)
        inflow = np.where(bn < 0, -bn, 0.0)
        phi = fvb.phi[:, 0]
        A = A + _scatter(n, n, _outer(inflow * fvb.weights, phi, phi), _face_dofs(space, fvb))
    return A.tocsr()


def gram_blocks(space: FunctionSpace, problem: ProblemDef, kappa=None, norm=None, diffusion_term="literal") -> LocalBlocks:
    """Local blocks of the inner product inducing the dG energy norm.

    ``norm='advective'`` weights jumps with ``|beta.n|/2`` and adds
    ``h_K |beta.grad w|^2``; ``norm='convective'`` (default for nonlinear
    problems) uses unit jump weights and ``h_K |grad w|^2``.  The diffusion
    volume term is ``(kappa grad w, kappa grad w)`` when ``diffusion_term``
    is ``'literal'`` and ``(grad w, kappa grad w)`` when it is ``'energy'``.
    """
    kappa = cell_kappa(space, problem) if kappa is None else kappa
    if norm is None:
        norm = "convective" if problem.nonlinear else "advective"
    mesh = space.mesh
    cv = space.cell_values()
    fvi = space.face_values("interior")
    fvb = space.face_values("boundary")
    cell, interior, boundary = _empty_blocks(space, fvi, fvb)

    cell += np.einsum("cq,qn,qm->cnm", cv.weights, cv.phi, cv.phi)
    if diffusion_term == "literal":
        kk = np.einsum("cki,ckj->cij", kappa, kappa)
    elif diffusion_term == "energy":
        kk = kappa
    else:
        raise ValueError(diffusion_term)
    cell += np.einsum("cq,cqni,cij,cqmj->cnm", cv.weights, cv.grad, kk, cv.grad, optimize=True)
    hK = mesh.diameters
    if norm == "advective":
        if problem.beta is not None:
            bg = np.einsum("cqmi,cqi->cqm", cv.grad, _beta(problem, cv.points))
            cell += np.einsum("c,cq,cqn,cqm->cnm", hK, cv.weights, bg, bg)
    elif norm == "convective":
        cell += np.einsum("c,cq,cqni,cqmi->cnm", hK, cv.weights, cv.grad, cv.grad)
    else:
        raise ValueError(f"unknown norm {norm!r}")

    if len(fvi):
        interior += _outer(_jump_weight(space, problem, fvi, kappa, norm) * fvi.weights, _jump(fvi), _jump(fvi))
    if len(fvb):
        phi = fvb.phi[:, 0]
        boundary += _outer(_jump_weight(space, problem, fvb, kappa, norm) * fvb.weights, phi, phi)
    return LocalBlocks(space, cell, interior, boundary, fvi, fvb)


def _jump_weight(space, problem, fv, kappa, norm):
    """Pointwise weight of the squared jump (or boundary trace) in the norm."""
    if fv.cells.shape[1] == 2:
        _, _, gamma = _safe_weights(kappa[fv.cells[:, 0]], kappa[fv.cells[:, 1]], fv.normals)
    else:
        gamma = _normal_diffusivity(kappa[fv.cells[:, 0]], fv.normals)
    weight = (face_penalties(space, fv) * gamma)[:, None] * np.ones_like(fv.weights)
    if norm == "advective":
        if problem.beta is not None:
            bn = np.einsum("fqi,fi->fq", _beta(problem, fv.points), fv.normals)
            weight = weight + 0.5 * np.abs(bn)
    else:
        weight = weight + 1.0
    return weight


def _volume_density(problem, kappa, hK, norm, diffusion_term, x, val, grad):
    """Pointwise integrand of the volume part of the squared norm.

    ``val`` is (nc, nq), ``grad`` is (nc, nq, 2) and ``x`` the points."""
    out = val**2
    if diffusion_term == "literal":
        kg = np.einsum("cij,cqj->cqi", kappa, grad)
        out = out + np.einsum("cqi,cqi->cq", kg, kg)
    else:
        out = out + np.einsum("cqi,cij,cqj->cq", grad, kappa, grad)
    if norm == "advective":
        if problem.beta is not None:
            out = out + hK[:, None] * np.einsum("cqi,cqi->cq", _beta(problem, x), grad) ** 2
    else:
        out = out + hK[:, None] * np.einsum("cqi,cqi->cq", grad, grad)
    return out


def energy_norm(space: FunctionSpace, problem: ProblemDef, coeffs, exact=None, exact_grad=None, kappa=None,
                norm=None, diffusion_term="literal", quad_degree=None) -> float:
    """Quadrature evaluation of the dG energy norm of ``exact - u_h``.

    Without ``exact`` this is the norm of ``u_h`` itself.  The exact solution
    is taken to be continuous, so interior jumps are those of ``u_h`` while
    boundary terms use the trace of ``exact - u_h``.
    """
    kappa = cell_kappa(space, problem) if kappa is None else kappa
    if norm is None:
        norm = "convective" if problem.nonlinear else "advective"
    if (exact is None) != (exact_grad is None):
        raise ValueError("exact and exact_grad go together")
    qd = 2 * space.degree + 4 if quad_degree is None else quad_degree
    uc = space.local(np.asarray(coeffs, dtype=float))
    cv = space.cell_values(qd)
    val = -np.einsum("qn,cn->cq", cv.phi, uc)
    grad = -np.einsum("cqni,cn->cqi", cv.grad, uc)
    if exact is not None:
        val = val + exact(cv.points)
        grad = grad + exact_grad(cv.points)
    dens = _volume_density(problem, kappa, space.mesh.diameters, norm, diffusion_term, cv.points, val, grad)
    total = np.sum(cv.weights * dens)

    fvi = space.face_values("interior", qd)
    if len(fvi):
        jump = np.einsum("fqn,fn->fq", _jump(fvi), uc[fvi.cells].reshape(len(fvi), -1))
        total += np.sum(_jump_weight(space, problem, fvi, kappa, norm) * fvi.weights * jump**2)
    fvb = space.face_values("boundary", qd)
    if len(fvb):
        trace = -np.einsum("fqn,fn->fq", fvb.phi[:, 0], uc[fvb.cells[:, 0]])
        if exact is not None:
            trace = trace + exact(fvb.points)
        total += np.sum(_jump_weight(space, problem, fvb, kappa, norm) * fvb.weights * trace**2)
    return float(np.sqrt(total))


def l2_error(space: FunctionSpace, coeffs, exact=None, quad_degree=None) -> float:
    qd = 2 * space.degree + 4 if quad_degree is None else quad_degree
    cv = space.cell_values(qd)
    e = np.einsum("qn,cn->cq", cv.phi, space.local(np.asarray(coeffs, dtype=float)))
    if exact is not None:
        e = e - exact(cv.points)
    return float(np.sqrt(np.sum(cv.weights * e**2)))


def assemble_gram(space: FunctionSpace, problem: ProblemDef, kappa=None, norm=None, diffusion_term="literal") -> sp.csr_matrix:
    return gram_blocks(space, problem, kappa, norm, diffusion_term).matrix()


def assemble_rhs(space: FunctionSpace, problem: ProblemDef, kappa=None) -> np.ndarray:
    """Load vector: source, weakly imposed Dirichlet data and Neumann data.

    For nonlinear problems the convective boundary data enter through the
    Lax-Friedrichs flux instead of the upwind inflow term.
    """
    kappa = cell_kappa(space, problem) if kappa is None else kappa
    n = space.num_dofs
    cv = space.cell_values()
    b = np.zeros(n)
    if problem.source is not None:
        f = np.asarray(problem.source(cv.points), dtype=float)
        b += _scatter_vector(n, np.einsum("cq,qn,cq->cn", cv.weights, cv.phi, f), space.dof_map)

    fvb = space.face_values("boundary")
    if not len(fvb):
        return b
    kinds = boundary_kinds(space, problem, fvb)
    phi = fvb.phi[:, 0]
    dofs = _face_dofs(space, fvb)
    dmask = kinds == DIRICHLET
    if dmask.any():
        if problem.dirichlet is None:
            raise ValueError("Dirichlet faces present but no Dirichlet data given")
        uD = np.asarray(problem.dirichlet(fvb.points), dtype=float) * dmask[:, None]
        delta = _normal_diffusivity(kappa[fvb.cells[:, 0]], fvb.normals)
        eta = face_penalties(space, fvb) * delta
        flux = _normal_flux(fvb, kappa)[:, 0]
        vals = np.einsum("fq,fqn,fq->fn", eta[:, None] * fvb.weights, phi, uD)
        vals -= np.einsum("fq,fqn,fq->fn", fvb.weights, flux, uD)
        if problem.beta is not None and not problem.nonlinear:
            bn = np.einsum("fqi,fi->fq", _beta(problem, fvb.points), fvb.normals)
            vals -= np.einsum("fq,fqn,fq->fn", fvb.weights * (bn < 0), phi, bn * uD)
        b += _scatter_vector(n, vals, dofs)
    nmask = kinds == NEUMANN
    if nmask.any() and problem.neumann is not None:
        hN = np.asarray(problem.neumann(fvb.points), dtype=float) * nmask[:, None]
        b += _scatter_vector(n, np.einsum("fq,fqn,fq->fn", fvb.weights, phi, hN), dofs)
    return b


# ---------------------------------------------------------------------------
# nonlinear convection


def lax_friedrichs_flux(u1, u2, normal, flux, dflux, kind="interior", u_D=None):
    """Lax-Friedrichs numerical flux and its dissipation parameter.

    ``kind='interior'`` uses both traces; ``kind='dirichlet'`` uses the
    interior trace ``u1`` and boundary data ``u_D``; ``kind='neumann'`` is an
    outflow face and returns the physical flux of ``u1``.
    """
    u1 = np.asarray(u1, dtype=float)
    n = np.asarray(normal, dtype=float)
    f1 = np.einsum("...i,...i->...", flux(u1), n)
    a1 = np.abs(np.einsum("...i,...i->...", dflux(u1), n))
    if kind == "interior":
        u2 = np.asarray(u2, dtype=float)
        f2 = np.einsum("...i,...i->...", flux(u2), n)
        a2 = np.abs(np.einsum("...i,...i->...", dflux(u2), n))
        eta = np.maximum(a1, a2)
        return 0.5 * (f1 + f2 + eta * (u1 - u2)), eta
    if kind == "dirichlet":
        uD = np.asarray(u_D, dtype=float)
        fD = np.einsum("...i,...i->...", flux(uD), n)
        return 0.5 * (f1 + a1 * u1) + 0.5 * (fD - a1 * uD), a1
    if kind == "neumann":
        return f1, a1
    raise ValueError(f"unknown face kind {kind!r}")


def _dot(a, n):
    return np.einsum("...i,...i->...", a, n)


class NonlinearForm:
    """Residual ``n_h(v; u) - l_h(v)`` and its derivative for a conservation
    law on a broken space.

    The SWIP part and the load vector are assembled once.  The derivative of
    the dissipation parameter is included when the problem provides
    ``d2flux`` and ``frozen_dissipation`` is false; otherwise the dissipation
    is held fixed at the current state.
    """

    def __init__(self, space: FunctionSpace, problem: ProblemDef, frozen_dissipation: bool = False):
        if not problem.nonlinear:
            raise ValueError("problem has no convective flux")
        self.space = space
        self.problem = problem
        self.frozen = frozen_dissipation or problem.d2flux is None
        self.kappa = cell_kappa(space, problem)
        self.swip = assemble_swip(space, problem, self.kappa)
        self.load = assemble_rhs(space, problem, self.kappa)
        self.cv = space.cell_values()
        self.fvi = space.face_values("interior")
        self.fvb = space.face_values("boundary")
        kinds = boundary_kinds(space, problem, self.fvb)
        self.dirichlet_mask = kinds == DIRICHLET
        self.neumann_mask = kinds == NEUMANN
        if self.dirichlet_mask.any():
            self.uD = np.asarray(problem.dirichlet(self.fvb.points), dtype=float)
        else:
            self.uD = np.zeros(self.fvb.weights.shape)
        self.idofs = _face_dofs(space, self.fvi)
        self.bdofs = _face_dofs(space, self.fvb)

    def _traces(self, uc):
        fvi, fvb = self.fvi, self.fvb
        ui = np.einsum("fsqn,fsn->fsq", fvi.phi, uc[fvi.cells]) if len(fvi) else np.zeros((0, 2, 0))
        ub = np.einsum("fqn,fn->fq", fvb.phi[:, 0], uc[fvb.cells[:, 0]])
        return ui, ub

    def residual(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        V, pb = self.space, self.problem
        n = V.num_dofs
        uc = V.local(u)
        r = self.swip @ u - self.load

        uq = np.einsum("qn,cn->cq", self.cv.phi, uc)
        fq = pb.flux(uq)
        r += _scatter_vector(n, -np.einsum("cq,cqni,cqi->cn", self.cv.weights, self.cv.grad, fq), V.dof_map)

        ui, ub = self._traces(uc)
        if len(self.fvi):
            nrm = self.fvi.normals[:, None, :]
            phi, _ = lax_friedrichs_flux(ui[:, 0], ui[:, 1], nrm, pb.flux, pb.dflux, "interior")
            r += _scatter_vector(n, np.einsum("fq,fqn,fq->fn", self.fvi.weights, _jump(self.fvi), phi), self.idofs)
        if len(self.fvb):
            nrm = self.fvb.normals[:, None, :]
            phiD, _ = lax_friedrichs_flux(ub, None, nrm, pb.flux, pb.dflux, "dirichlet", self.uD)
            phiN, _ = lax_friedrichs_flux(ub, None, nrm, pb.flux, pb.dflux, "neumann")
            phi = np.where(self.dirichlet_mask[:, None], phiD, np.where(self.neumann_mask[:, None], phiN, 0.0))
            r += _scatter_vector(n, np.einsum("fq,fqn,fq->fn", self.fvb.weights, self.fvb.phi[:, 0], phi), self.bdofs)
        if not np.all(np.isfinite(r)):
            raise FloatingPointError("non-finite nonlinear residual")
        return r

    def jacobian(self, u) -> sp.csr_matrix:
        u = np.asarray(u, dtype=float)
        V, pb = self.space, self.problem
        n = V.num_dofs
        uc = V.local(u)

        uq = np.einsum("qn,cn->cq", self.cv.phi, uc)
        dfq = pb.dflux(uq)
        blocks = -np.einsum("cq,cqni,cqi,qm->cnm", self.cv.weights, self.cv.grad, dfq, self.cv.phi, optimize=True)
        A = self.swip + _scatter(n, n, blocks, V.dof_map)

        ui, ub = self._traces(uc)
        if len(self.fvi):
            nrm = self.fvi.normals[:, None, :]
            d1, d2 = self._interior_derivatives(ui[:, 0], ui[:, 1], nrm)
            trial = np.concatenate([d1[..., None] * self.fvi.phi[:, 0], d2[..., None] * self.fvi.phi[:, 1]], axis=-1)
            A = A + _scatter(n, n, _outer(self.fvi.weights, _jump(self.fvi), trial), self.idofs)
        if len(self.fvb):
            nrm = self.fvb.normals[:, None, :]
            a = _dot(pb.dflux(ub), nrm)
            eta = np.abs(a)
            dD = 0.5 * (a + eta)
            if not self.frozen:
                dD = dD + 0.5 * (ub - self.uD) * np.sign(a) * _dot(pb.d2flux(ub), nrm)
            d = np.where(self.dirichlet_mask[:, None], dD, np.where(self.neumann_mask[:, None], a, 0.0))
            phi = self.fvb.phi[:, 0]
            A = A + _scatter(n, n, _outer(self.fvb.weights * d, phi, phi), self.bdofs)
        return A.tocsr()

    def hessian(self, u, w) -> sp.csr_matrix:
        """Second derivative of ``w . residual(u)`` with respect to ``u``.

        Terms with the third derivative of the flux are dropped, so the
        result is exact for fluxes that are at most quadratic.
        """
        u = np.asarray(u, dtype=float)
        V, pb = self.space, self.problem
        if pb.d2flux is None:
            raise ValueError("second derivative of the flux is required")
        n = V.num_dofs
        uc, wc = V.local(u), V.local(np.asarray(w, dtype=float))
        cv = self.cv

        uq = np.einsum("qn,cn->cq", cv.phi, uc)
        gw = np.einsum("cqni,cn->cqi", cv.grad, wc)
        coef = -np.einsum("cqi,cqi->cq", gw, pb.d2flux(uq))
        A = _scatter(n, n, np.einsum("cq,qn,qm->cnm", cv.weights * coef, cv.phi, cv.phi), V.dof_map)

        ui, ub = self._traces(uc)
        if len(self.fvi):
            fv = self.fvi
            nrm = fv.normals[:, None, :]
            u1, u2 = ui[:, 0], ui[:, 1]
            a1, a2 = _dot(pb.dflux(u1), nrm), _dot(pb.dflux(u2), nrm)
            b1, b2 = _dot(pb.d2flux(u1), nrm), _dot(pb.d2flux(u2), nrm)
            c11, c12, c22 = 0.5 * b1, np.zeros_like(b1), 0.5 * b2
            if not self.frozen:
                first = np.abs(a1) >= np.abs(a2)
                e1 = np.where(first, np.sign(a1) * b1, 0.0)
                e2 = np.where(first, 0.0, np.sign(a2) * b2)
                c11, c12, c22 = c11 + e1, 0.5 * (e2 - e1), c22 - e2
            jw = np.einsum("fqn,fn->fq", _jump(fv), wc[fv.cells].reshape(len(fv), -1)) * fv.weights
            p1, p2 = fv.phi[:, 0], fv.phi[:, 1]
            top = np.concatenate([_outer(jw * c11, p1, p1), _outer(jw * c12, p1, p2)], axis=2)
            bottom = np.concatenate([_outer(jw * c12, p2, p1), _outer(jw * c22, p2, p2)], axis=2)
            A = A + _scatter(n, n, np.concatenate([top, bottom], axis=1), self.idofs)
        if len(self.fvb):
            fv = self.fvb
            nrm = fv.normals[:, None, :]
            a = _dot(pb.dflux(ub), nrm)
            b = _dot(pb.d2flux(ub), nrm)
            cD = 0.5 * b if self.frozen else 0.5 * b + np.sign(a) * b
            c = np.where(self.dirichlet_mask[:, None], cD, np.where(self.neumann_mask[:, None], b, 0.0))
            phi = fv.phi[:, 0]
            tw = np.einsum("fqn,fn->fq", phi, wc[fv.cells[:, 0]]) * fv.weights
            A = A + _scatter(n, n, _outer(tw * c, phi, phi), self.bdofs)
        return A.tocsr()

    def _interior_derivatives(self, u1, u2, nrm):
        pb = self.problem
        a1 = _dot(pb.dflux(u1), nrm)
        a2 = _dot(pb.dflux(u2), nrm)
        eta = np.maximum(np.abs(a1), np.abs(a2))
        d1 = 0.5 * (a1 + eta)
        d2 = 0.5 * (a2 - eta)
        if not self.frozen:
            first = np.abs(a1) >= np.abs(a2)
            de1 = np.where(first, np.sign(a1) * _dot(pb.d2flux(u1), nrm), 0.0)
            de2 = np.where(first, 0.0, np.sign(a2) * _dot(pb.d2flux(u2), nrm))
            d1 = d1 + 0.5 * (u1 - u2) * de1
            d2 = d2 + 0.5 * (u1 - u2) * de2
        return d1, d2


def assemble_nonlinear_residual(space: FunctionSpace, u, problem: ProblemDef) -> np.ndarray:
    return NonlinearForm(space, problem).residual(u)


def assemble_nonlinear_jacobian(space: FunctionSpace, u, problem: ProblemDef, frozen_dissipation=False) -> sp.csr_matrix:
    return NonlinearForm(space, problem, frozen_dissipation).jacobian(u)
