"""Small procedural surfaces used by the tests, scripts and demos."""
from __future__ import annotations

import math

import numpy as np

from .mesh import TriMesh


def grid(nx: int, ny: int, width: float = 1.0, height: float = 1.0, symmetric: bool = True) -> TriMesh:
    """Flat rectangular grid in the XY plane, origin at the lower-left corner.

    With ``symmetric`` the diagonals flip across the vertical mid-line so the
    triangulation is mirror-symmetric about x = width / 2 (needs even nx).
    """
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    V = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    tris = []
    for j in range(ny):
        for i in range(nx):
            a = j * (nx + 1) + i
            b, c, d = a + 1, a + nx + 2, a + nx + 1
            if symmetric and i >= nx // 2:
                tris += [[a, b, d], [b, c, d]]
            else:
                tris += [[a, b, c], [a, c, d]]
    return TriMesh.from_arrays(V, tris)


def unit_square() -> TriMesh:
    return TriMesh.from_arrays([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], [[0, 1, 2], [0, 2, 3]])


def single_triangle() -> TriMesh:
    return TriMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


def icosahedron() -> TriMesh:
    p = (1 + math.sqrt(5)) / 2
    V = np.array(
        [[-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
         [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
         [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1]],
        dtype=float,
    )
    V /= np.linalg.norm(V[0])
    F = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return TriMesh.from_arrays(V, F)


def disk(n_boundary: int = 64, rings: int = 8, radius: float = 1.0) -> TriMesh:
    """Triangulated disk: concentric rings with a proportional vertex count."""
    verts = [[0.0, 0.0, 0.0]]
    ring_start = [0]
    counts = [1]
    for r in range(1, rings + 1):
        n = max(6, round(n_boundary * r / rings))
        if r == rings:
            n = n_boundary
        ring_start.append(len(verts))
        counts.append(n)
        for k in range(n):
            th = 2 * math.pi * k / n
            verts.append([radius * r / rings * math.cos(th), radius * r / rings * math.sin(th), 0.0])
    tris = []
    for r in range(1, rings + 1):
        inner, n_in = ring_start[r - 1], counts[r - 1]
        outer, n_out = ring_start[r], counts[r]
        if n_in == 1:
            for k in range(n_out):
                tris.append([0, outer + k, outer + (k + 1) % n_out])
            continue
        # merge the two rings by angle
        i = j = 0
        while i < n_in or j < n_out:
            a_in = (i + 1) / n_in
            a_out = (j + 1) / n_out
            if j < n_out and (i >= n_in or a_out <= a_in):
                tris.append([inner + i % n_in, outer + j % n_out, outer + (j + 1) % n_out])
                j += 1
            else:
                tris.append([inner + i % n_in, outer + j % n_out, inner + (i + 1) % n_in])
                i += 1
    return TriMesh.from_arrays(verts, tris)


def strip(length: float, width: float, n_long: int, n_wide: int = 1) -> TriMesh:
    return grid(n_long, n_wide, length, width, symmetric=False)


def quad_symmetric_grid(n: int, size: float = 1.0) -> TriMesh:
    """Square grid whose diagonals point away from the center, mirror
    symmetric about both mid-lines (n even)."""
    xs = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    V = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    tris = []
    for j in range(n):
        for i in range(n):
            a = j * (n + 1) + i
            b, c, d = a + 1, a + n + 2, a + n + 1
            if (i < n // 2) == (j < n // 2):
                tris += [[a, b, c], [a, c, d]]
            else:
                tris += [[a, b, d], [b, c, d]]
    return TriMesh.from_arrays(V, tris)


def paraboloid(n: int = 16, size: float = 10.0, rise: float = 2.5) -> TriMesh:
    """Square-plan paraboloid cap z = rise * (1 - (x^2 + y^2) / (2 h^2)) centered
    at the origin; the triangulation is mirror symmetric about x = 0 and y = 0."""
    m = quad_symmetric_grid(n, size)
    V = m.vertices.copy()
    h = size / 2
    V[:, :2] -= h
    V[:, 2] = rise * (1.0 - (V[:, 0] ** 2 + V[:, 1] ** 2) / (2 * h * h))
    return TriMesh.from_arrays(V, m.triangles)


def jittered_square(n: int = 40, size: float = 1.0, jitter: float = 0.3, seed: int = 0) -> TriMesh:
    """Delaunay triangulation of a jittered n x n grid filling a square; the
    irregular connectivity keeps graph distances closer to Euclidean than a
    structured grid does."""
    from scipy.spatial import Delaunay

    rng = np.random.default_rng(seed)
    h = size / n
    xs = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    P = np.column_stack([X.ravel(), Y.ravel()])
    inner = (P[:, 0] > 0) & (P[:, 0] < size) & (P[:, 1] > 0) & (P[:, 1] < size)
    P[inner] += rng.uniform(-jitter * h, jitter * h, size=(int(inner.sum()), 2))
    tri = Delaunay(P).simplices
    V = np.column_stack([P, np.zeros(len(P))])
    # counter-clockwise seen from +Z
    a, b, c = V[tri[:, 0]], V[tri[:, 1]], V[tri[:, 2]]
    flip = np.cross(b - a, c - a)[:, 2] < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    return TriMesh.from_arrays(V, tri)
