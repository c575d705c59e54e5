import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resmin.mesh import (
    MeshError,
    build_mesh,
    is_conforming,
    lshape_mesh,
    read_mesh,
    rectangle_mesh,
    refine,
    uniform_refine,
    write_mesh,
)

SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])


def unit_triangle(tag="dirichlet"):
    return build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], {(0, 1): tag, (1, 2): tag, (2, 0): tag})


def two_triangles():
    tags = {(0, 1): "b", (1, 2): "b", (2, 3): "b", (3, 0): "b"}
    return build_mesh(SQUARE, [[0, 1, 2], [0, 2, 3]], tags)


def test_two_cell_square_counts():
    m = two_triangles()
    assert m.num_cells == 2
    assert m.faces.num_faces == 5
    assert m.faces.num_interior == 1


def test_eight_cell_grid_counts():
    m = rectangle_mesh(2, 2)
    assert m.num_cells == 8
    assert m.num_vertices == 9
    assert m.faces.num_faces == 16
    assert m.faces.num_interior == 8


def test_repeated_vertex_rejected():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 1]], {})


def test_zero_area_rejected():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [2, 0]], [[0, 1, 2]], {(0, 1): "b", (1, 2): "b", (0, 2): "b"})


def test_missing_boundary_tag_rejected():
    with pytest.raises(MeshError):
        build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], {(0, 1): "b"})


def test_shared_hypotenuse_geometry():
    m = two_triangles()
    f = np.flatnonzero(m.faces.interior)[0]
    assert m.faces.lengths[f] == pytest.approx(np.sqrt(2))
    n = m.faces.normals[f]
    assert np.dot(n, [1.0, 1.0]) == pytest.approx(0.0, abs=1e-15)
    assert np.linalg.norm(n) == pytest.approx(1.0)
    # normal points from the lower to the higher cell index
    c0, c1 = m.faces.cells[f]
    assert np.dot(m.centroids[c1] - m.centroids[c0], n) > 0


def test_single_triangle_faces_and_tags():
    m = unit_triangle()
    assert m.faces.num_boundary == 3
    assert m.faces.num_interior == 0
    assert set(m.faces.tags) == {"dirichlet"}


def test_boundary_normals_point_outward():
    m = rectangle_mesh(3, 2)
    fs = m.faces
    b = np.flatnonzero(fs.boundary)
    mid = m.vertices[fs.vertices[b]].mean(axis=1)
    assert np.all(np.einsum("fi,fi->f", mid - m.centroids[fs.cells[b, 0]], fs.normals[b]) > 0)


def test_unit_triangle_geometry():
    m = unit_triangle()
    assert m.areas[0] == pytest.approx(0.5)
    assert m.perimeters[0] == pytest.approx(2 + np.sqrt(2))
    assert m.diameters[0] == pytest.approx(np.sqrt(2))


def test_scaling_geometry():
    m = unit_triangle()
    m2 = build_mesh(2 * m.vertices, m.cells, m.boundary_tags)
    assert m2.areas[0] == pytest.approx(4 * m.areas[0])
    assert m2.perimeters[0] == pytest.approx(2 * m.perimeters[0])
    assert m2.diameters[0] == pytest.approx(2 * m.diameters[0])


def test_equilateral_area():
    m = build_mesh([[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]], [[0, 1, 2]], {(0, 1): "b", (1, 2): "b", (0, 2): "b"})
    assert m.areas[0] == pytest.approx(np.sqrt(3) / 4)


def test_clockwise_cells_reoriented():
    m = build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]], {(0, 1): "b", (1, 2): "b", (0, 2): "b"})
    assert m.areas[0] == pytest.approx(0.5)


def test_refine_all_cells():
    m = rectangle_mesh(2, 2)
    r = refine(m, np.arange(m.num_cells))
    assert r.num_cells >= 2 * m.num_cells
    assert is_conforming(r)
    assert r.areas.sum() == pytest.approx(1.0)


def test_refine_nothing_returns_same_mesh():
    m = rectangle_mesh(2, 2)
    assert refine(m, []) is m


def test_refine_one_cell_is_conforming():
    m = rectangle_mesh(2, 2)
    r = refine(m, [3])
    assert is_conforming(r)
    assert r.num_cells > m.num_cells
    assert r.areas.sum() == pytest.approx(1.0)
    # parents point into the coarse mesh and cover their children exactly
    assert np.allclose(np.bincount(r.parent, weights=r.areas, minlength=m.num_cells), m.areas)


def test_refine_preserves_boundary_tags():
    m = rectangle_mesh(2, 2)
    r = uniform_refine(m, 2)
    fs = r.faces
    for tag, check in (("left", lambda p: p[:, 0] == 0), ("top", lambda p: p[:, 1] == 1)):
        f = fs.with_tag(tag)
        mid = r.vertices[fs.vertices[f]].mean(axis=1)
        assert np.all(check(mid))
        assert fs.lengths[f].sum() == pytest.approx(1.0)


def test_lshape_mesh():
    m = lshape_mesh()
    assert m.areas.sum() == pytest.approx(3.0)
    c = m.centroids
    assert not np.any((c[:, 0] < 0) & (c[:, 1] < 0))


def test_mesh_roundtrip(tmp_path):
    m = refine(rectangle_mesh(2, 2), [0, 5])
    path = tmp_path / "m.json"
    write_mesh(m, path)
    m2 = read_mesh(path)
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.cells, m2.cells)
    assert m.boundary_tags == m2.boundary_tags


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=6), st.integers(1, 4))
def test_random_refinement_stays_conforming(seeds, rounds):
    m = rectangle_mesh(2, 2)
    rng = np.random.default_rng(seeds)
    min_angle0 = _min_angle(m)
    for _ in range(rounds):
        marked = rng.choice(m.num_cells, size=rng.integers(1, m.num_cells + 1), replace=False)
        m = refine(m, marked)
    assert is_conforming(m)
    assert m.areas.sum() == pytest.approx(1.0)
    # bisection of the refinement edge keeps the shape regular
    assert _min_angle(m) >= min_angle0 / 2 - 1e-12


def _min_angle(m):
    x = m.coords
    out = np.inf
    for i in range(3):
        a = x[:, (i + 1) % 3] - x[:, i]
        b = x[:, (i + 2) % 3] - x[:, i]
        cos = np.einsum("ci,ci->c", a, b) / np.linalg.norm(a, axis=1) / np.linalg.norm(b, axis=1)
        out = min(out, np.arccos(np.clip(cos, -1, 1)).min())
    return out
