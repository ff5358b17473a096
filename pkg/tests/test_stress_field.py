"""Direction smoothing, Lipschitz saturation, rescaling and symmetrization."""
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy.sparse.csgraph import shortest_path

from gridshell import fixtures
from gridshell.mesh import MeshError, TriMesh
from gridshell.stress_field import (
    PsiField,
    SymmetryPlane,
    barycenter_graph,
    lipschitz_saturate,
    load_psi,
    rescale,
    save_psi,
    saturate_on_graph,
    smooth_line_field,
    symmetrize,
)


def graph_distances(mesh):
    nb = barycenter_graph(mesh)
    rows = [p for p, lst in enumerate(nb) for _ in lst]
    cols = [q for lst in nb for q, _ in lst]
    w = [d for lst in nb for _, d in lst]
    G = sp.csr_matrix((w, (rows, cols)), shape=(mesh.n_triangles,) * 2)
    return shortest_path(G, directed=False)


def brute_saturate(values, dist, L):
    return np.max(values[None, :] - L * dist, axis=1)


def line_angle_deg(u, v):
    c = abs(float(np.dot(u, v)) / np.linalg.norm(u) / np.linalg.norm(v))
    return np.degrees(np.arccos(min(c, 1.0)))


# smoothing ---------------------------------------------------------------


def test_uniform_field_is_a_fixed_point():
    mesh = fixtures.grid(5, 5)
    psi = PsiField.uniform(mesh, (1.0, 1.0, 0.0), a=2.0)
    out = smooth_line_field(psi, mesh)
    assert np.allclose(np.abs(np.sum(out.u * psi.u, axis=1)), 1.0, atol=1e-12)


def _outlier_field(mesh, a_out):
    psi = PsiField.uniform(mesh, (1.0, 0.0, 0.0))
    t = mesh.n_triangles // 2
    u = psi.u.copy()
    u[t] = [0.0, 1.0, 0.0]
    a = np.ones(mesh.n_triangles)
    a[t] = a_out
    return psi.replace(u=u, a=a), t


def test_free_outlier_is_aligned():
    mesh = fixtures.grid(6, 6)
    psi, t = _outlier_field(mesh, 1.0)
    out = smooth_line_field(psi, mesh)
    assert line_angle_deg(out.u[t], [1, 0, 0]) < 1e-3


def test_anchored_outlier_is_retained():
    mesh = fixtures.grid(6, 6)
    psi, t = _outlier_field(mesh, 10.0)
    out = smooth_line_field(psi, mesh, smoothness_weight=0.1)
    assert line_angle_deg(out.u[t], [0, 1, 0]) < 5.0


def test_smoothing_ignores_sign():
    mesh = fixtures.jittered_square(5, 1.0, 0.3, 2)
    rng = np.random.default_rng(0)
    th = rng.uniform(0, np.pi, mesh.n_triangles)
    psi = PsiField(PsiField.directions(mesh, th), np.ones(len(th)), rng.uniform(1, 3, len(th)))
    flip = np.where(rng.random(len(th)) < 0.5, -1.0, 1.0)[:, None]
    a = smooth_line_field(psi, mesh)
    b = smooth_line_field(psi.replace(u=psi.u * flip), mesh)
    assert np.allclose(np.abs(np.sum(a.u * b.u, axis=1)), 1.0, atol=1e-9)


# Lipschitz saturation ------------------------------------------------------


def test_three_triangle_strip():
    b, h = 1.2, 2.4
    V = [[0, 0, 0], [b, 0, 0], [b / 2, h, 0], [1.5 * b, h, 0], [2 * b, 0, 0]]
    mesh = TriMesh.from_arrays(V, [[0, 1, 2], [1, 3, 2], [1, 4, 3]])
    C = mesh.barycenters
    assert np.allclose(np.linalg.norm(np.diff(C, axis=0), axis=1), 1.0)
    assert np.allclose(lipschitz_saturate([0.0, 10.0, 0.0], mesh, 2.0), [8, 10, 8])


def test_trivial_saturation_cases():
    mesh = fixtures.grid(4, 4)
    const = np.full(mesh.n_triangles, 3.0)
    assert np.array_equal(lipschitz_saturate(const, mesh, 0.1), const)
    vals = np.random.default_rng(0).uniform(0, 5, mesh.n_triangles)
    assert np.array_equal(lipschitz_saturate(vals, mesh, 1e12), vals)
    with pytest.raises(ValueError):
        lipschitz_saturate(vals, mesh, 0.0)
    with pytest.raises(ValueError):
        lipschitz_saturate(-vals, mesh, 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 50.0))
def test_saturation_matches_brute_force(seed, L):
    mesh = fixtures.jittered_square(10, 2.0, 0.35, seed % 1000)
    assert mesh.n_triangles == 200
    vals = np.random.default_rng(seed).uniform(0, 10, mesh.n_triangles)
    out = lipschitz_saturate(vals, mesh, L)
    dist = graph_distances(mesh)
    assert np.allclose(out, brute_saturate(vals, dist, L), rtol=0, atol=1e-12)
    gap = np.abs(out[:, None] - out[None, :]) - L * dist
    assert gap.max() <= 1e-9
    assert np.array_equal(lipschitz_saturate(out, mesh, L), out)
    assert out.max() == vals.max()
    assert np.all(out >= vals)


def test_saturate_on_graph_path():
    nb = [[(1, 1.0)], [(0, 1.0), (2, 1.0)], [(1, 1.0)]]
    assert np.allclose(saturate_on_graph(np.array([0.0, 10.0, 0.0]), nb, 2.0), [8, 10, 8])


# rescaling ---------------------------------------------------------------


def _psi(d, a=None):
    d = np.asarray(d, float)
    a = np.ones_like(d) if a is None else np.asarray(a, float)
    return PsiField(np.tile([1.0, 0, 0], (len(d), 1)), d, a)


def test_rescale_examples():
    assert np.allclose(rescale(_psi([2, 6]), 3, 1).d, [1, 3])
    assert np.allclose(rescale(_psi([1, 2], [1, 7]), 2, 1).a, 1.0)
    assert np.allclose(rescale(_psi([5, 5, 5]), 4, 1).d, 2.5)
    with pytest.raises(ValueError):
        rescale(_psi([1, 2]), 0.5, 1)
    with pytest.raises(ValueError):
        rescale(_psi([1, 2]), 2, 0.9)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0, 1e3), min_size=2, max_size=30), st.floats(1, 10))
def test_rescale_is_monotone(d, D):
    d = np.array(d)
    out = rescale(_psi(d), D, 1).d
    order = np.argsort(d, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-12)
    assert out.min() >= 1 - 1e-12 and out.max() <= D + 1e-12


# symmetrization ----------------------------------------------------------

X_PLANE = SymmetryPlane((0.0, 0.0, 0.0), (1.0, 0.0, 0.0))
Y_PLANE = SymmetryPlane((0.0, 0.0, 0.0), (0.0, 1.0, 0.0))


def _mirror_mate(mesh, t, plane):
    img = mesh.barycenters[t] @ plane.reflection()[:3, :3].T + plane.reflection()[:3, 3]
    return int(np.argmin(np.linalg.norm(mesh.barycenters - img, axis=1)))


def test_symmetric_field_unchanged_and_idempotent():
    mesh = fixtures.paraboloid(6, 4.0, 1.0)
    C = mesh.barycenters
    psi = PsiField.uniform(mesh, (1.0, 0.0, 0.0)).replace(d=1 + C[:, 0] ** 2 + C[:, 1] ** 2)
    out = symmetrize(psi, mesh, [X_PLANE, Y_PLANE], 1e-6)
    assert np.allclose(out.d, psi.d, atol=1e-9)
    assert np.allclose(np.abs(np.sum(out.u * psi.u, axis=1)), 1.0, atol=1e-9)
    again = symmetrize(out, mesh, [X_PLANE, Y_PLANE], 1e-6)
    assert np.allclose(again.d, out.d, atol=1e-9)
    assert np.allclose(np.abs(np.sum(again.u * out.u, axis=1)), 1.0, atol=1e-9)


def test_two_point_density_average():
    mesh = fixtures.paraboloid(4, 4.0, 0.0)
    t = 0
    s = _mirror_mate(mesh, t, X_PLANE)
    d = np.full(mesh.n_triangles, 2.0)
    d[t], d[s] = 1.0, 3.0
    out = symmetrize(_psi(d).reproject(mesh), mesh, [X_PLANE], 1e-6)
    assert out.d[t] == pytest.approx(2.0) and out.d[s] == pytest.approx(2.0)


def test_mirrored_directions_average_to_trace():
    mesh = fixtures.paraboloid(4, 4.0, 0.0)  # flat, z = 0
    t = 0
    s = _mirror_mate(mesh, t, X_PLANE)
    ang = np.radians(20.0)
    u = PsiField.uniform(mesh, (0.0, 1.0, 0.0)).u.copy()
    # the trace of x = 0 is the y axis; the two samples sit at +20 deg and -20 deg from it
    u[t] = [np.sin(ang), np.cos(ang), 0]
    u[s] = [np.sin(ang), np.cos(ang), 0]
    out = symmetrize(PsiField.uniform(mesh).replace(u=u), mesh, [X_PLANE], 1e-6)
    assert line_angle_deg(out.u[t], [0, 1, 0]) < 1e-9
    assert line_angle_deg(out.u[s], [0, 1, 0]) < 1e-9


def test_asymmetric_mesh_rejected():
    mesh = fixtures.jittered_square(6, 2.0, 0.3, 0)
    mesh = mesh.with_vertices(mesh.vertices - [0.5, 1.0, 0.0])  # spans x in [-0.5, 1.5]
    with pytest.raises(MeshError, match="worst is triangle"):
        symmetrize(PsiField.uniform(mesh), mesh, [X_PLANE], 1e-6)


def test_symmetrize_ignores_sign():
    mesh = fixtures.paraboloid(6, 4.0, 1.0)
    rng = np.random.default_rng(3)
    th = rng.uniform(0, np.pi, mesh.n_triangles)
    psi = PsiField(PsiField.directions(mesh, th), rng.uniform(1, 2, len(th)), rng.uniform(1, 2, len(th)))
    flip = np.where(rng.random(len(th)) < 0.5, -1.0, 1.0)[:, None]
    a = symmetrize(psi, mesh, [X_PLANE, Y_PLANE], 1e-6)
    b = symmetrize(psi.replace(u=psi.u * flip), mesh, [X_PLANE, Y_PLANE], 1e-6)
    assert np.allclose(np.abs(np.sum(a.u * b.u, axis=1)), 1.0, atol=1e-9)
    assert np.allclose(a.d, b.d)


def test_psi_json_round_trip(tmp_path):
    mesh = fixtures.grid(3, 3)
    psi = PsiField.uniform(mesh, (1, 1, 0), d=2.0, a=3.0)
    save_psi(psi, tmp_path / "f.json")
    back = load_psi(tmp_path / "f.json")
    assert np.allclose(back.u, psi.u) and np.allclose(back.d, 2) and np.allclose(back.a, 3)
