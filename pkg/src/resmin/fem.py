"""Lagrange spaces on triangles: reference basis, dof maps, the conforming to
broken embedding and precomputed integration data."""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh
from .quadrature import quadrature_rule

BROKEN = "broken"
CONFORMING = "conforming"


def _monomial_exponents(p):
    return np.array([(a, d - a) for d in range(p + 1) for a in range(d, -1, -1)], dtype=np.int64)


def reference_nodes(p: int) -> np.ndarray:
    """Equispaced Lagrange nodes on the reference triangle.

    Order: the three vertices, then ``p - 1`` nodes on each edge ``e``
    (opposite vertex ``e``, running from vertex ``e+1`` to ``e+2``), then
    the interior nodes.
    """
    verts = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    nodes = [v for v in verts]
    for e in range(3):
        a, b = verts[(e + 1) % 3], verts[(e + 2) % 3]
        nodes += [a + k / p * (b - a) for k in range(1, p)]
    for j in range(1, p):
        for i in range(1, p - j):
            nodes.append(np.array([i / p, j / p]))
    return np.array(nodes)


class ReferenceElement:
    """Nodal Lagrange basis of degree ``p`` built from the inverse monomial
    Vandermonde matrix."""

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("polynomial degree must be >= 1")
        self.degree = p
        self.nodes = reference_nodes(p)
        self.exponents = _monomial_exponents(p)
        V = self._monomials(self.nodes)
        self.coefficients = np.linalg.inv(V)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def _monomials(self, x):
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        return x[..., 0, None] ** a * x[..., 1, None] ** b

    def _monomial_grads(self, x):
        a, b = self.exponents[:, 0], self.exponents[:, 1]
        X, Y = x[..., 0, None], x[..., 1, None]
        dx = np.where(a > 0, a * X ** np.maximum(a - 1, 0), 0.0) * Y**b
        dy = X**a * np.where(b > 0, b * Y ** np.maximum(b - 1, 0), 0.0)
        return np.stack([dx, dy], axis=-1)

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._monomials(x) @ self.coefficients

    def gradients(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        g = self._monomial_grads(x)
        return np.einsum("...mk,mn->...nk", g, self.coefficients)


@lru_cache(maxsize=None)
def reference_element(p: int) -> ReferenceElement:
    return ReferenceElement(p)


def eval_basis(p: int, point):
    """Values ``(nloc,)`` and reference gradients ``(nloc, 2)`` at ``point``."""
    ref = reference_element(p)
    x = np.asarray(point, dtype=float)
    return ref.values(x), ref.gradients(x)


@dataclass(frozen=True, eq=False)
class CellValues:
    points: np.ndarray  # (nc, nq, 2)
    weights: np.ndarray  # (nc, nq), include the area scaling
    phi: np.ndarray  # (nq, nloc)
    grad: np.ndarray  # (nc, nq, nloc, 2), physical gradients


@dataclass(frozen=True, eq=False)
class FaceValues:
    """Trace data on a group of faces; ``sides`` is 2 for interior faces and
    1 for boundary faces."""

    faces: np.ndarray  # (n,)
    cells: np.ndarray  # (n, sides)
    normals: np.ndarray  # (n, 2)
    points: np.ndarray  # (n, nq, 2)
    weights: np.ndarray  # (n, nq), include the face length
    phi: np.ndarray  # (n, sides, nq, nloc)
    grad: np.ndarray  # (n, sides, nq, nloc, 2)

    def __len__(self):
        return len(self.faces)


class FunctionSpace:
    """Scalar Lagrange space of degree ``p`` on a mesh.

    Broken spaces number dofs cell by cell.  Conforming spaces identify
    vertex and edge nodes shared between cells; global numbers follow the
    first appearance when scanning cells, then local nodes.
    """

    def __init__(self, mesh: Mesh, degree: int, continuity: str = BROKEN, quad_degree: int | None = None):
        if degree < 1:
            raise ValueError("polynomial degree must be >= 1")
        if continuity not in (BROKEN, CONFORMING):
            raise ValueError(f"unknown continuity {continuity!r}")
        self.mesh = mesh
        self.degree = degree
        self.continuity = continuity
        self.element = reference_element(degree)
        self.quad_degree = 2 * degree + 1 if quad_degree is None else quad_degree
        self.dof_map = self._build_dof_map()
        self.dof_map.flags.writeable = False
        self.num_dofs = int(self.dof_map.max()) + 1
        self._cache = {}

    def __repr__(self):
        return f"FunctionSpace(P{self.degree}, {self.continuity}, cells={self.mesh.num_cells}, dofs={self.num_dofs})"

    @property
    def num_local(self) -> int:
        return self.element.num_nodes

    def _build_dof_map(self):
        mesh, p = self.mesh, self.degree
        nc, nloc = mesh.num_cells, self.element.num_nodes
        if self.continuity == BROKEN:
            return np.arange(nc * nloc, dtype=np.int64).reshape(nc, nloc)
        nv, nf = mesh.num_vertices, mesh.faces.num_faces
        keys = np.empty((nc, nloc), dtype=np.int64)
        keys[:, :3] = mesh.cells
        cf = mesh.cell_faces
        fverts = mesh.faces.vertices
        col = 3
        k = np.arange(1, p)
        for e in range(3):
            f = cf[:, e]
            start = mesh.cells[:, (e + 1) % 3]
            forward = start == fverts[f, 0]
            pos = np.where(forward[:, None], k[None, :], p - k[None, :])
            keys[:, col : col + p - 1] = nv + f[:, None] * (p - 1) + pos - 1
            col += p - 1
        ni = nloc - col
        keys[:, col:] = nv + nf * (p - 1) + np.arange(nc)[:, None] * ni + np.arange(ni)[None, :]
        _, first, inverse = np.unique(keys.ravel(), return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        return rank[inverse.reshape(-1)].reshape(nc, nloc)

    # -- geometry ---------------------------------------------------------
    @cached_property
    def jacobians(self):
        x = self.mesh.coords
        J = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)  # columns are edge vectors
        return J, np.linalg.inv(J), np.abs(np.linalg.det(J))

    @cached_property
    def node_coords(self) -> np.ndarray:
        """Physical Lagrange node coordinates per cell, shape (nc, nloc, 2)."""
        J, _, _ = self.jacobians
        return self.mesh.coords[:, 0][:, None, :] + np.einsum("cij,nj->cni", J, self.element.nodes)

    @cached_property
    def dof_coords(self) -> np.ndarray:
        out = np.empty((self.num_dofs, 2))
        out[self.dof_map.ravel()] = self.node_coords.reshape(-1, 2)
        return out

    def to_reference(self, cells, points):
        """Reference coordinates of physical ``points[..., 2]`` in ``cells[...]``."""
        _, invJ, _ = self.jacobians
        x0 = self.mesh.coords[cells, 0]
        return np.einsum("...ij,...j->...i", invJ[cells], points - x0)

    def physical_gradients(self, cells, ref_points):
        """Basis gradients at reference points; ``cells`` broadcasts against
        ``ref_points.shape[:-1]``."""
        _, invJ, _ = self.jacobians
        g = self.element.gradients(ref_points)  # (..., nloc, 2)
        return np.einsum("...ji,...nj->...ni", invJ[cells], g)

    # -- integration data -------------------------------------------------
    def cell_values(self, degree: int | None = None) -> CellValues:
        degree = self.quad_degree if degree is None else degree
        key = ("cell", degree)
        if key not in self._cache:
            self._cache[key] = self._cell_values(degree)
        return self._cache[key]

    def _cell_values(self, degree):
        q = quadrature_rule("triangle", degree)
        J, invJ, detJ = self.jacobians
        pts = self.mesh.coords[:, 0][:, None, :] + np.einsum("cij,qj->cqi", J, q.points)
        phi = self.element.values(q.points)
        gref = self.element.gradients(q.points)  # (nq, nloc, 2)
        grad = np.einsum("cji,qnj->cqni", invJ, gref)
        return CellValues(pts, detJ[:, None] * q.weights[None, :], phi, grad)

    def face_values(self, which: str, degree: int | None = None) -> FaceValues:
        """Trace data on ``'interior'`` or ``'boundary'`` faces."""
        degree = self.quad_degree if degree is None else degree
        key = (which, degree)
        if key not in self._cache:
            self._cache[key] = self._face_values(which, degree)
        return self._cache[key]

    def _face_values(self, which, degree):
        fs = self.mesh.faces
        if which == "interior":
            idx = np.flatnonzero(fs.interior)
            cells = fs.cells[idx]
        elif which == "boundary":
            idx = np.flatnonzero(fs.boundary)
            cells = fs.cells[idx, :1]
        else:
            raise ValueError(which)
        q = quadrature_rule("edge", degree)
        verts = self.mesh.vertices[fs.vertices[idx]]  # (n, 2, 2)
        pts = verts[:, None, 0, :] + q.points[None, :, None] * (verts[:, None, 1, :] - verts[:, None, 0, :])
        weights = fs.lengths[idx, None] * q.weights[None, :]
        sides = cells.shape[1]
        phi, grad = [], []
        for s in range(sides):
            ref = self.to_reference(cells[:, s, None], pts)
            phi.append(self.element.values(ref))
            grad.append(self.physical_gradients(cells[:, s, None], ref))
        return FaceValues(
            faces=idx,
            cells=cells,
            normals=fs.normals[idx],
            points=pts,
            weights=weights,
            phi=np.stack(phi, axis=1),
            grad=np.stack(grad, axis=1),
        )

    # -- functions --------------------------------------------------------
    def local(self, coeffs) -> np.ndarray:
        """Cell-local coefficient array, shape (nc, nloc)."""
        return np.asarray(coeffs)[self.dof_map]

    def evaluate(self, coeffs, points, cells=None) -> np.ndarray:
        """Point values of a function.  Cells are located by barycentric
        search unless given."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if cells is None:
            cells = locate(self.mesh, points)
        ref = self.to_reference(cells, points)
        vals = self.element.values(ref)
        return np.einsum("pn,pn->p", vals, self.local(coeffs)[cells])


def build_space(mesh: Mesh, p: int, continuity: str = BROKEN, quad_degree: int | None = None) -> FunctionSpace:
    return FunctionSpace(mesh, p, continuity, quad_degree)


def locate(mesh: Mesh, points, tol=1e-12) -> np.ndarray:
    """Index of a cell containing each point (lowest index on ties)."""
    points = np.atleast_2d(points)
    x = mesh.coords
    J = np.stack([x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]], axis=2)
    invJ = np.linalg.inv(J)
    out = np.empty(len(points), dtype=np.int64)
    for i, pt in enumerate(points):
        lam = np.einsum("cij,cj->ci", invJ, pt - x[:, 0])
        inside = (lam[:, 0] >= -tol) & (lam[:, 1] >= -tol) & (lam.sum(axis=1) <= 1 + tol)
        hits = np.flatnonzero(inside)
        if len(hits) == 0:
            raise ValueError(f"point {pt} is outside the mesh")
        out[i] = hits[0]
    return out


def cg_embedding(conforming: FunctionSpace, broken: FunctionSpace) -> sp.csr_matrix:
    """Sparse 0/1 matrix mapping conforming coefficients to broken ones."""
    if conforming.mesh is not broken.mesh or conforming.degree != broken.degree:
        raise ValueError("spaces must share mesh and degree")
    if conforming.continuity != CONFORMING or broken.continuity != BROKEN:
        raise ValueError("expected (conforming, broken) spaces")
    rows = broken.dof_map.ravel()
    cols = conforming.dof_map.ravel()
    E = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(broken.num_dofs, conforming.num_dofs))
    return E


def interpolate(field, space: FunctionSpace) -> np.ndarray:
    """Nodal interpolant of a vectorised callable ``field(points[..., 2])``."""
    vals = np.asarray(field(space.dof_coords), dtype=float)
    vals = np.broadcast_to(vals, (space.num_dofs,)).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("field is not finite at some interpolation node")
    return vals


def prolongate(coeffs, coarse: FunctionSpace, fine: FunctionSpace) -> np.ndarray:
    """Transfer a function to a space on a refinement of ``coarse.mesh``.

    Exact for nested meshes: each fine node is evaluated in the ancestor cell
    recorded by :func:`resmin.mesh.refine`.
    """
    if fine.mesh is coarse.mesh:
        return np.array(coeffs, copy=True)
    parent = fine.mesh.parent
    if parent is None:
        raise ValueError("fine mesh carries no refinement history")
    first_cell = np.empty(fine.num_dofs, dtype=np.int64)
    first_cell[fine.dof_map.ravel()[::-1]] = np.repeat(np.arange(fine.mesh.num_cells), fine.num_local)[::-1]
    return coarse.evaluate(coeffs, fine.dof_coords, cells=parent[first_cell])
