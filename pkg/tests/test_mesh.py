"""Mesh container, OBJ I/O, boundary tags, graph distances and splitting."""
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridshell import fixtures
from gridshell.mesh import (
    MeshError,
    PolyMesh,
    TriMesh,
    classify_boundary,
    geodesic_distances,
    load_obj,
    save_obj,
    split_long_edges,
)


def test_single_triangle_obj(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    m = load_obj(p)
    assert m.n_triangles == 1
    assert m.boundary.all()


def test_quad_face_rejected(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshError, match="non-triangular face"):
        load_obj(p)


def test_non_manifold_and_degenerate_rejected():
    V = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]]
    with pytest.raises(MeshError, match="non-manifold"):
        TriMesh.from_arrays(V, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(MeshError, match="degenerate"):
        TriMesh.from_arrays([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])


def test_icosahedron_counts(tmp_path):
    ico = fixtures.icosahedron()
    save_obj(ico, tmp_path / "ico.obj")
    m = load_obj(tmp_path / "ico.obj")
    assert (m.n_vertices, m.n_triangles) == (12, 20)
    assert len(m.edges) == 30
    assert m.n_vertices - len(m.edges) + m.n_triangles == 2
    assert not m.boundary.any() and not m.corner.any()


def test_round_trip_single_triangle(tmp_path):
    m = fixtures.single_triangle()
    save_obj(m, tmp_path / "a.obj")
    back = load_obj(tmp_path / "a.obj")
    assert np.array_equal(back.triangles, m.triangles)
    assert np.allclose(back.vertices, m.vertices, atol=1e-9)


def test_save_round_trip_is_idempotent(tmp_path):
    m = fixtures.disk(16, 3)
    save_obj(m, tmp_path / "a.obj")
    save_obj(load_obj(tmp_path / "a.obj"), tmp_path / "b.obj")
    assert (tmp_path / "a.obj").read_bytes() == (tmp_path / "b.obj").read_bytes()


def test_poly_save_hexagon_and_empty(tmp_path):
    ang = np.arange(6) * np.pi / 3
    hexagon = PolyMesh(np.column_stack([np.cos(ang), np.sin(ang), 0 * ang]), [list(range(6))])
    save_obj(hexagon, tmp_path / "h.obj")
    face_lines = [l for l in (tmp_path / "h.obj").read_text().splitlines() if l.startswith("f ")]
    assert face_lines == ["f 1 2 3 4 5 6"]
    save_obj(PolyMesh(np.zeros((2, 3)), []), tmp_path / "e.obj")
    lines = (tmp_path / "e.obj").read_text().splitlines()
    assert len(lines) == 2 and all(l.startswith("v ") for l in lines)


def test_corner_classification():
    assert classify_boundary(fixtures.unit_square(), math.radians(30)).corner.sum() == 4
    disk = fixtures.disk(64, 6)
    assert disk.boundary.sum() == 64
    assert disk.corner.sum() == 0


def test_path_distances_and_tie_break():
    # a thin strip stands in for a path: vertices 0, 1, 2 along the x axis
    V = [[0, 0, 0], [1, 0, 0], [2, 0, 0], [0.5, 5, 0], [1.5, 5, 0]]
    m = TriMesh.from_arrays(V, [[0, 1, 3], [1, 4, 3], [1, 2, 4]])
    g = geodesic_distances(m, [0])
    assert np.allclose(g.distance[:3], [0, 1, 2])
    g = geodesic_distances(m, [0, 2])
    assert g.nearest[:3].tolist() == [0, 0, 2]
    assert np.allclose(g.distance[:3], [0, 1, 0])


def test_square_diagonal_distance():
    m = fixtures.unit_square()
    g = geodesic_distances(m, [0])
    far = int(np.argmax(np.linalg.norm(m.vertices - m.vertices[0], axis=1)))
    assert g.distance[far] == pytest.approx(math.sqrt(2), abs=1e-12)


def test_unreachable_is_infinite():
    V = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 0, 0], [6, 0, 0], [5, 1, 0]]
    m = TriMesh.from_arrays(V, [[0, 1, 2], [3, 4, 5]])
    g = geodesic_distances(m, [0])
    assert not g.reachable[3:].any()
    assert (g.nearest[3:] == -1).all()


def test_split_counts():
    t = fixtures.single_triangle()
    m1, smap = split_long_edges(t, [tuple(t.edges[0])])
    assert (m1.n_vertices, m1.n_triangles) == (4, 2)
    m3, _ = split_long_edges(t, [tuple(e) for e in t.edges])
    assert (m3.n_vertices, m3.n_triangles) == (6, 4)
    m0, smap0 = split_long_edges(t, [])
    assert np.array_equal(m0.triangles, t.triangles) and not smap0.vertex_parents


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 12))
def test_split_conserves_area(seed, k):
    m = fixtures.jittered_square(6, 2.0, 0.3, seed)
    rng = np.random.default_rng(seed)
    marked = [tuple(e) for e in m.edges[rng.choice(len(m.edges), size=min(k, len(m.edges)), replace=False)]]
    out, _ = split_long_edges(m, marked)
    assert out.triangle_areas.sum() == pytest.approx(m.triangle_areas.sum(), rel=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_distance_is_edge_lipschitz(seed):
    m = fixtures.jittered_square(7, 3.0, 0.3, seed)
    rng = np.random.default_rng(seed)
    g = geodesic_distances(m, rng.choice(m.n_vertices, 3, replace=False))
    a, b = m.edges.T
    assert np.all(np.abs(g.distance[a] - g.distance[b]) <= m.edge_lengths + 1e-12)
    again = geodesic_distances(m, g.sources)
    assert np.array_equal(again.nearest, g.nearest)
