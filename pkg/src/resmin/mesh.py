"""Conforming triangular meshes with face topology and newest-vertex bisection.

A :class:`Mesh` stores vertex coordinates, counter-clockwise vertex triples
and a tag for every boundary edge.  Each cell also carries the local index of
its refinement edge; local edge ``e`` is the edge opposite local vertex ``e``.

Examples
--------
>>> mesh = rectangle_mesh(2, 2)
>>> mesh.num_cells, mesh.faces.num_faces
(8, 16)
>>> fine = refine(mesh, range(mesh.num_cells))
>>> fine.num_cells
16
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np


class MeshError(ValueError):
    """Raised for invalid mesh input."""


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class FaceSet:
    """Edges of a mesh together with their incidence and geometry.

    Faces are sorted lexicographically by their (sorted) vertex pair.  For an
    interior face ``cells[f] = (K1, K2)`` with ``K1 < K2`` and the normal
    points from ``K1`` into ``K2``; boundary faces have ``cells[f, 1] == -1``
    and an outward normal.
    """

    vertices: np.ndarray  # (nf, 2) sorted vertex pairs
    cells: np.ndarray  # (nf, 2)
    local: np.ndarray  # (nf, 2) local edge index inside each incident cell
    normals: np.ndarray  # (nf, 2)
    lengths: np.ndarray  # (nf,)
    tags: tuple  # per face, None for interior faces

    @property
    def num_faces(self) -> int:
        return len(self.lengths)

    @cached_property
    def interior(self) -> np.ndarray:
        return self.cells[:, 1] >= 0

    @cached_property
    def boundary(self) -> np.ndarray:
        return ~self.interior

    @property
    def num_interior(self) -> int:
        return int(self.interior.sum())

    @property
    def num_boundary(self) -> int:
        return int(self.boundary.sum())

    def with_tag(self, tag: str) -> np.ndarray:
        """Indices of boundary faces carrying ``tag``."""
        return np.array([f for f, t in enumerate(self.tags) if t == tag], dtype=np.int64)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable conforming triangulation.

    Use :func:`build_mesh` to construct one from raw arrays; it validates the
    input and fixes orientation.  ``parent`` maps every cell to the cell of
    the mesh it was refined from (``None`` for an initial mesh).
    """

    vertices: np.ndarray
    cells: np.ndarray
    boundary_tags: Mapping[tuple[int, int], str]
    refinement_edge: np.ndarray
    parent: np.ndarray | None = None
    level: int = 0

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_cells(self) -> int:
        return len(self.cells)

    @cached_property
    def coords(self) -> np.ndarray:
        """Cell vertex coordinates, shape (nc, 3, 2)."""
        return self.vertices[self.cells]

    @cached_property
    def areas(self) -> np.ndarray:
        return 0.5 * _cross2(self.coords[:, 1] - self.coords[:, 0], self.coords[:, 2] - self.coords[:, 0])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Length of local edge ``e`` (opposite vertex ``e``), shape (nc, 3)."""
        x = self.coords
        return np.stack(
            [np.linalg.norm(x[:, (e + 2) % 3] - x[:, (e + 1) % 3], axis=1) for e in range(3)], axis=1
        )

    @cached_property
    def perimeters(self) -> np.ndarray:
        return self.edge_lengths.sum(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths.max(axis=1)

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.coords.mean(axis=1)

    @cached_property
    def _topology(self):
        return _face_topology(self)

    @property
    def faces(self) -> FaceSet:
        return self._topology[0]

    @property
    def cell_faces(self) -> np.ndarray:
        """Global face index of each local edge, shape (nc, 3)."""
        return self._topology[1]

    def bounds(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _edge_key(a, b):
    return (a, b) if a < b else (b, a)


def _normalize_tags(boundary_tags) -> dict:
    if isinstance(boundary_tags, Mapping):
        items = boundary_tags.items()
    else:
        items = (((i, j), t) for i, j, t in boundary_tags)
    out = {}
    for (i, j), tag in items:
        out[_edge_key(int(i), int(j))] = str(tag)
    return out


def _longest_edge(coords, cells):
    """Local index of the longest edge; ties go to the lowest vertex pair."""
    lengths = np.stack(
        [np.linalg.norm(coords[:, (e + 2) % 3] - coords[:, (e + 1) % 3], axis=1) for e in range(3)], axis=1
    )
    ref = np.empty(len(cells), dtype=np.int64)
    for c in range(len(cells)):
        lmax = lengths[c].max()
        cands = [e for e in range(3) if lengths[c, e] >= lmax * (1 - 1e-12)]
        ref[c] = min(cands, key=lambda e: _edge_key(cells[c, (e + 1) % 3], cells[c, (e + 2) % 3]))
    return ref


def build_mesh(vertices, cells, boundary_tags, refinement_edge=None) -> Mesh:
    """Validate raw mesh data and return a :class:`Mesh`.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    cells : array_like of int, shape (nc, 3)
        Clockwise cells are reordered counter-clockwise.
    boundary_tags : mapping ``(i, j) -> tag`` or iterable of ``(i, j, tag)``
        Must tag exactly the boundary edges.
    refinement_edge : array_like of int, optional
        Local refinement edge per cell.  Defaults to the longest edge.

    Raises
    ------
    MeshError
        On degenerate or duplicate cells, out-of-range indices, edges shared
        by more than two cells, or missing/extraneous boundary tags.
    """
    vertices = np.asarray(vertices, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshError("vertices must have shape (nv, 2)")
    if cells.ndim != 2 or cells.shape[1] != 3 or len(cells) == 0:
        raise MeshError("need at least one cell of three vertex indices")
    if cells.min() < 0 or cells.max() >= len(vertices):
        raise MeshError("cell vertex index out of range")
    if np.any((cells[:, 0] == cells[:, 1]) | (cells[:, 1] == cells[:, 2]) | (cells[:, 0] == cells[:, 2])):
        raise MeshError("degenerate cell with repeated vertex")

    x = vertices[cells]
    area2 = _cross2(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
    scale = np.max(np.ptp(vertices, axis=0)) ** 2
    if np.any(np.abs(area2) <= 1e-14 * scale):
        raise MeshError("degenerate cell with zero area")
    flip = area2 < 0
    if refinement_edge is not None:
        refinement_edge = np.array(refinement_edge, dtype=np.int64)
        # swapping local vertices 1 and 2 swaps local edges 1 and 2
        r = refinement_edge[flip]
        refinement_edge[flip] = np.where(r == 0, 0, 3 - r)
    cells[flip] = cells[flip][:, [0, 2, 1]]

    if len(np.unique(np.sort(cells, axis=1), axis=0)) != len(cells):
        raise MeshError("duplicate cell")

    if refinement_edge is None:
        refinement_edge = _longest_edge(vertices[cells], cells)

    mesh = Mesh(
        vertices=_frozen(vertices),
        cells=_frozen(cells),
        boundary_tags=_normalize_tags(boundary_tags),
        refinement_edge=_frozen(refinement_edge),
    )
    mesh.faces  # validates topology and tags
    return mesh


def _face_topology(mesh: Mesh):
    cells = mesh.cells
    nc = len(cells)
    edges = np.stack([cells[:, [(e + 1) % 3, (e + 2) % 3]] for e in range(3)], axis=1)  # (nc, 3, 2)
    keys = np.sort(edges.reshape(-1, 2), axis=1)
    uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    if np.any(counts > 2):
        raise MeshError("edge shared by more than two cells")
    nf = len(uniq)
    owner = np.arange(3 * nc) // 3
    loc = np.arange(3 * nc) % 3
    order = np.lexsort((owner, inverse))  # by face, then by cell index
    fcells = -np.ones((nf, 2), dtype=np.int64)
    flocal = -np.ones((nf, 2), dtype=np.int64)
    first = np.ones(3 * nc, dtype=bool)
    sorted_faces = inverse[order]
    first[1:] = sorted_faces[1:] != sorted_faces[:-1]
    fcells[sorted_faces[first], 0] = owner[order][first]
    flocal[sorted_faces[first], 0] = loc[order][first]
    fcells[sorted_faces[~first], 1] = owner[order][~first]
    flocal[sorted_faces[~first], 1] = loc[order][~first]

    a = mesh.vertices[uniq[:, 0]]
    b = mesh.vertices[uniq[:, 1]]
    t = b - a
    lengths = np.linalg.norm(t, axis=1)
    normals = np.stack([t[:, 1], -t[:, 0]], axis=1) / lengths[:, None]
    out = 0.5 * (a + b) - mesh.centroids[fcells[:, 0]]
    normals[np.einsum("ij,ij->i", normals, out) < 0] *= -1

    tags = [None] * nf
    remaining = dict(mesh.boundary_tags)
    for f in np.flatnonzero(fcells[:, 1] < 0):
        key = (int(uniq[f, 0]), int(uniq[f, 1]))
        if key not in remaining:
            raise MeshError(f"untagged boundary face {key}")
        tags[f] = remaining.pop(key)
    if remaining:
        raise MeshError(f"tags given for non-boundary faces: {sorted(remaining)[:5]}")

    faceset = FaceSet(
        vertices=_frozen(uniq),
        cells=_frozen(fcells),
        local=_frozen(flocal),
        normals=_frozen(normals),
        lengths=_frozen(lengths),
        tags=tuple(tags),
    )
    return faceset, _frozen(inverse.reshape(nc, 3))


def face_topology(mesh: Mesh) -> FaceSet:
    return mesh.faces


def element_geometry(mesh: Mesh, cell: int):
    """Return ``(area, perimeter, diameter)`` of one cell."""
    return float(mesh.areas[cell]), float(mesh.perimeters[cell]), float(mesh.diameters[cell])


def refine(mesh: Mesh, marked: Iterable[int]) -> Mesh:
    """Newest-vertex bisection of the marked cells with conforming closure.

    Every marked cell is bisected at least once.  Neighbours are bisected as
    needed so the result has no hanging nodes.  The new midpoint becomes the
    peak (newest vertex) of both children.  ``parent`` of the returned mesh
    maps each cell to its ancestor in ``mesh``.
    """
    marked = np.unique(np.fromiter((int(c) for c in marked), dtype=np.int64))
    if len(marked) == 0:
        return mesh
    if marked.min() < 0 or marked.max() >= mesh.num_cells:
        raise IndexError("marked cell out of range")

    cf = mesh.cell_faces
    ref_face = cf[np.arange(mesh.num_cells), mesh.refinement_edge]
    split = np.zeros(mesh.faces.num_faces, dtype=bool)
    split[ref_face[marked]] = True
    while True:
        touched = split[cf].any(axis=1)
        missing = touched & ~split[ref_face]
        if not missing.any():
            break
        split[ref_face[missing]] = True

    fverts = mesh.faces.vertices
    split_faces = np.flatnonzero(split)
    nv = mesh.num_vertices
    midpoint = {}
    for k, f in enumerate(split_faces):
        midpoint[(int(fverts[f, 0]), int(fverts[f, 1]))] = nv + k
    new_vertices = np.concatenate(
        [mesh.vertices, 0.5 * (mesh.vertices[fverts[split_faces, 0]] + mesh.vertices[fverts[split_faces, 1]])]
    )

    new_cells, new_ref, parent = [], [], []

    def bisect(tri, r, origin):
        p, q1, q2 = tri[r], tri[(r + 1) % 3], tri[(r + 2) % 3]
        m = midpoint.get(_edge_key(q1, q2))
        if m is None:
            new_cells.append(tri)
            new_ref.append(r)
            parent.append(origin)
            return
        # children (p, q1, m) and (p, m, q2) keep counter-clockwise order
        bisect((p, q1, m), 2, origin)
        bisect((p, m, q2), 1, origin)

    cells = mesh.cells
    for c in range(mesh.num_cells):
        bisect(tuple(int(v) for v in cells[c]), int(mesh.refinement_edge[c]), c)

    tags = {}
    for (a, b), tag in mesh.boundary_tags.items():
        m = midpoint.get((a, b))
        if m is None:
            tags[(a, b)] = tag
        else:
            tags[_edge_key(a, m)] = tag
            tags[_edge_key(m, b)] = tag

    cells_arr = np.array(new_cells, dtype=np.int64)
    out = Mesh(
        vertices=_frozen(new_vertices),
        cells=_frozen(cells_arr),
        boundary_tags=tags,
        refinement_edge=_frozen(np.array(new_ref, dtype=np.int64)),
        parent=_frozen(np.array(parent, dtype=np.int64)),
        level=mesh.level + 1,
    )
    out.faces
    return out


def uniform_refine(mesh: Mesh, times: int = 1) -> Mesh:
    for _ in range(times):
        mesh = refine(mesh, range(mesh.num_cells))
    return mesh


def is_conforming(mesh: Mesh) -> bool:
    """No vertex lies strictly inside a face of the mesh."""
    fv = mesh.faces.vertices
    a = mesh.vertices[fv[:, 0]]
    b = mesh.vertices[fv[:, 1]]
    t = b - a
    ll = np.einsum("ij,ij->i", t, t)
    for v, x in enumerate(mesh.vertices):
        s = np.einsum("ij,ij->i", x - a, t) / ll
        d = np.abs(_cross2(t, x - a)) / np.sqrt(ll)
        hit = (s > 1e-12) & (s < 1 - 1e-12) & (d < 1e-12 * np.sqrt(ll))
        if hit.any():
            return False
    return True


# ---------------------------------------------------------------------------
# generators


def _tag_boundary(vertices, cells, classify):
    cells = np.asarray(cells)
    edges = np.sort(np.concatenate([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    tags = {}
    for i, j in uniq[counts == 1]:
        mid = 0.5 * (vertices[i] + vertices[j])
        tags[(int(i), int(j))] = classify(mid)
    return tags


def rectangle_mesh(nx: int, ny: int, x0=0.0, x1=1.0, y0=0.0, y1=1.0) -> Mesh:
    """Structured ``nx`` by ``ny`` grid of rectangles, each split along the
    diagonal from its lower-left to its upper-right corner.

    Boundary edges are tagged ``left``, ``right``, ``bottom`` and ``top``.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.stack([X.ravel(), Y.ravel()], axis=1)
    idx = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    cells = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = idx[j, i], idx[j, i + 1], idx[j + 1, i + 1], idx[j + 1, i]
            cells.append((a, b, c))
            cells.append((a, c, d))
    tol = 1e-12 * max(x1 - x0, y1 - y0)

    def classify(m):
        if abs(m[0] - x0) < tol:
            return "left"
        if abs(m[0] - x1) < tol:
            return "right"
        if abs(m[1] - y0) < tol:
            return "bottom"
        return "top"

    return build_mesh(vertices, cells, _tag_boundary(vertices, cells, classify))


def lshape_mesh() -> Mesh:
    """Six-triangle fan around the re-entrant corner of (-1,1)^2 \\ (-1,0]^2."""
    vertices = np.array(
        [[0, 0], [1, 0], [1, 1], [0, 1], [-1, 1], [-1, 0], [0, -1], [1, -1]], dtype=float
    )
    cells = [(0, 1, 2), (0, 2, 3), (0, 3, 4), (0, 4, 5), (0, 6, 7), (0, 7, 1)]
    return build_mesh(vertices, cells, _tag_boundary(vertices, cells, lambda m: "boundary"))


# ---------------------------------------------------------------------------
# plain-text mesh files


def write_mesh(mesh: Mesh, path) -> None:
    """Write ``mesh`` in the line-oriented ``dim 2`` text format."""
    lines = ["dim 2", f"vertices {mesh.num_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"cells {mesh.num_cells}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    tags = sorted(mesh.boundary_tags.items())
    lines.append(f"boundary_faces {len(tags)}")
    lines += [f"{i} {j} {t}" for (i, j), t in tags]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path) -> Mesh:
    """Read a mesh written by :func:`write_mesh`."""
    with open(path) as fh:
        tokens = [ln.split() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    it = iter(tokens)
    try:
        head = next(it)
        if head != ["dim", "2"]:
            raise MeshError(f"unsupported header {' '.join(head)!r}")
        kw, n = next(it)
        if kw != "vertices":
            raise MeshError("expected 'vertices' block")
        vertices = [[float(a), float(b)] for a, b in (next(it) for _ in range(int(n)))]
        kw, n = next(it)
        if kw != "cells":
            raise MeshError("expected 'cells' block")
        cells = [[int(a) for a in next(it)] for _ in range(int(n))]
        kw, n = next(it)
        if kw != "boundary_faces":
            raise MeshError("expected 'boundary_faces' block")
        tags = [(int(i), int(j), t) for i, j, t in (next(it) for _ in range(int(n)))]
    except (StopIteration, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    return build_mesh(vertices, cells, tags)
