"""The decomposed stress field: a line field plus density and anisotropy
scalars per triangle, with smoothing, saturation, rescaling and mirror
symmetrization."""
from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import MeshError, TriMesh

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


@dataclass(frozen=True, eq=False)
class PsiField:
    """Per-triangle dominant direction ``u`` (a line: u and -u are the same
    value), density ``d``, anisotropy ``a >= 1`` and isotropic flags."""

    u: np.ndarray
    d: np.ndarray
    a: np.ndarray
    isotropic: np.ndarray | None = None

    def __post_init__(self):
        if self.isotropic is None:
            object.__setattr__(self, "isotropic", np.zeros(len(self.d), bool))

    def __len__(self) -> int:
        return len(self.d)

    def replace(self, **kw) -> "PsiField":
        vals = dict(u=self.u, d=self.d, a=self.a, isotropic=self.isotropic)
        vals.update(kw)
        return PsiField(**vals)

    def take(self, idx: np.ndarray) -> "PsiField":
        return PsiField(self.u[idx], self.d[idx], self.a[idx], self.isotropic[idx])

    def reproject(self, mesh: TriMesh) -> "PsiField":
        """Project ``u`` onto each triangle's tangent plane and renormalize."""
        n = mesh.triangle_normals
        u = self.u - np.sum(self.u * n, axis=1, keepdims=True) * n
        norm = np.linalg.norm(u, axis=1)
        bad = norm < 1e-12
        u[bad] = mesh.tangent_frames[bad, 0]
        u[~bad] /= norm[~bad, None]
        return self.replace(u=u)

    def angles(self, mesh: TriMesh) -> np.ndarray:
        F = mesh.tangent_frames
        return np.arctan2(np.sum(self.u * F[:, 1], 1), np.sum(self.u * F[:, 0], 1))

    @staticmethod
    def directions(mesh: TriMesh, theta: np.ndarray) -> np.ndarray:
        F = mesh.tangent_frames
        return np.cos(theta)[:, None] * F[:, 0] + np.sin(theta)[:, None] * F[:, 1]

    @classmethod
    def uniform(cls, mesh: TriMesh, direction=(1.0, 0.0, 0.0), d: float = 1.0, a: float = 1.0) -> "PsiField":
        """Constant field: ``direction`` projected onto every tangent plane."""
        m = mesh.n_triangles
        u = np.tile(np.asarray(direction, float), (m, 1))
        return cls(u, np.full(m, float(d)), np.full(m, float(a))).reproject(mesh)


@dataclass(frozen=True)
class SymmetryPlane:
    point: tuple[float, float, float]
    normal: tuple[float, float, float]

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        object.__setattr__(self, "normal", tuple((n / np.linalg.norm(n)).tolist()))
        object.__setattr__(self, "point", tuple(float(x) for x in self.point))

    def reflection(self) -> np.ndarray:
        """4x4 homogeneous reflection matrix."""
        n = np.asarray(self.normal)
        p = np.asarray(self.point)
        M = np.eye(4)
        M[:3, :3] -= 2 * np.outer(n, n)
        M[:3, 3] = 2 * np.dot(p, n) * n
        return M

    def signed_distance(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x) - np.asarray(self.point)) @ np.asarray(self.normal)


# --------------------------------------------------------------------------
# line-field smoothing


def _transport_offsets(mesh: TriMesh):
    """Directed dual edges (t, s) and the angle offset that expresses an
    angle of triangle s in the frame of t (unfolding across the shared edge)."""
    F = mesh.tangent_frames
    V = mesh.vertices
    inner = np.flatnonzero(mesh.edge_triangle_count == 2)
    t = mesh.edge_triangles[inner, 0]
    s = mesh.edge_triangles[inner, 1]
    ev = V[mesh.edges[inner, 1]] - V[mesh.edges[inner, 0]]
    alpha_t = np.arctan2(np.sum(ev * F[t, 1], 1), np.sum(ev * F[t, 0], 1))
    alpha_s = np.arctan2(np.sum(ev * F[s, 1], 1), np.sum(ev * F[s, 0], 1))
    src = np.concatenate([t, s])
    dst = np.concatenate([s, t])
    off = np.concatenate([alpha_t - alpha_s, alpha_s - alpha_t])
    return src, dst, off


def _color_classes(mesh: TriMesh) -> list[np.ndarray]:
    color = -np.ones(mesh.n_triangles, dtype=np.int64)
    for t, nb in enumerate(mesh.triangle_neighbors):
        used = {color[s] for s in nb}
        c = 0
        while c in used:
            c += 1
        color[t] = c
    return [np.flatnonzero(color == c) for c in range(color.max() + 1)]


def line_field_energy(theta, theta0, fidelity, src, dst, off, w_smooth) -> float:
    # each undirected edge appears twice among the directed pairs
    smooth = 0.5 * w_smooth * np.sum(1 - np.cos(2 * (theta[src] - theta[dst] - off)))
    return float(smooth + np.sum(fidelity * (1 - np.cos(2 * (theta - theta0)))))


def smooth_line_field(
    field: PsiField,
    mesh: TriMesh,
    smoothness_weight: float = 1.0,
    tol: float = 1e-8,
    max_sweeps: int = 20000,
) -> PsiField:
    """Smooth the direction field, holding on to it where anisotropy is high.

    Minimizes  sum_edges w (1 - cos 2 dtheta) + sum_t (a_t - 1)(1 - cos 2(theta_t - theta0_t))
    by exact per-triangle updates over an independent-set coloring of the
    dual graph. Each update sets 2 theta to the argument of the weighted sum
    of the neighbours' and the original doubled-angle vectors, so the
    energy never increases. Stops when the relative decrease drops below
    ``tol``.
    """
    if smoothness_weight < 0:
        raise ValueError("smoothness weight must be non-negative")
    theta0 = field.angles(mesh)
    theta = theta0.copy()
    fid = field.a - 1.0
    src, dst, off = _transport_offsets(mesh)
    classes = _color_classes(mesh)
    in_class = [np.isin(src, c) for c in classes]
    anchor = fid * np.exp(2j * theta0)
    E = line_field_energy(theta, theta0, fid, src, dst, off, smoothness_weight)
    floor = 1e-14 * max(1.0, smoothness_weight * len(src) + fid.sum())
    for sweep in range(max_sweeps):
        if E <= floor:
            break
        for cls, sel in zip(classes, in_class):
            z = anchor[cls].astype(complex)
            acc = np.zeros(mesh.n_triangles, complex)
            np.add.at(acc, src[sel], smoothness_weight * np.exp(2j * (theta[dst[sel]] + off[sel])))
            z = z + acc[cls]
            ok = np.abs(z) > 1e-14
            theta[cls[ok]] = 0.5 * np.angle(z[ok])
        E_new = line_field_energy(theta, theta0, fid, src, dst, off, smoothness_weight)
        done = E - E_new <= tol * E
        E = E_new
        if done:
            break
    else:
        log.warning("line-field smoothing stopped after %d sweeps (energy %.3e)", max_sweeps, E)
    return field.replace(u=PsiField.directions(mesh, theta))


# --------------------------------------------------------------------------
# Lipschitz saturation


def barycenter_graph(mesh: TriMesh) -> list[list[tuple[int, float]]]:
    C = mesh.barycenters
    nbrs: list[list[tuple[int, float]]] = [[] for _ in range(mesh.n_triangles)]
    for t0, t1 in mesh.edge_triangles.tolist():
        if t0 >= 0 and t1 >= 0:
            w = float(np.linalg.norm(C[t0] - C[t1]))
            nbrs[t0].append((t1, w))
            nbrs[t1].append((t0, w))
    return nbrs


def saturate_on_graph(values: np.ndarray, neighbors: list[list[tuple[int, float]]], L: float) -> np.ndarray:
    """result(p) = max_q values(q) - L dist(p, q), propagated from the top
    down like Dijkstra; never below the input and exact at the maximum."""
    if L <= 0:
        raise ValueError("Lipschitz constant must be positive")
    r = np.asarray(values, float).tolist()
    heap = [(-v, i) for i, v in enumerate(r)]
    heapq.heapify(heap)
    done = [False] * len(r)
    while heap:
        negv, p = heapq.heappop(heap)
        if done[p] or -negv != r[p]:
            continue
        done[p] = True
        for q, w in neighbors[p]:
            cand = r[p] - L * w
            if cand > r[q]:
                r[q] = cand
                heapq.heappush(heap, (-cand, q))
    return np.maximum(np.array(r), values)


def lipschitz_saturate(values: np.ndarray, mesh: TriMesh, L: float) -> np.ndarray:
    """Raise a per-triangle scalar until it is L-Lipschitz along the
    barycenter graph, keeping its maxima."""
    values = np.asarray(values, float)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ValueError("values must be finite and non-negative")
    return saturate_on_graph(values, barycenter_graph(mesh), L)


def default_lipschitz(values: np.ndarray, R: float) -> float:
    """Let the scalar sweep its full range over one target cell diameter."""
    span = float(np.ptp(values))
    return span / R if span > 0 else 1.0


# --------------------------------------------------------------------------
# rescaling


def _affine(x: np.ndarray, hi: float) -> np.ndarray:
    lo_x, hi_x = float(x.min()), float(x.max())
    if hi_x - lo_x <= 1e-12 * max(abs(hi_x), 1e-300):
        return np.full_like(x, (1.0 + hi) / 2.0)
    return 1.0 + (x - lo_x) * (hi - 1.0) / (hi_x - lo_x)


def rescale(field: PsiField, D: float, A: float) -> PsiField:
    """Map density onto [1, D] and anisotropy onto [1, A] affinely; a
    constant input goes to the middle of the interval."""
    if D < 1 or A < 1:
        raise ValueError(f"D and A must be >= 1 (got D={D}, A={A})")
    return field.replace(d=_affine(field.d, D), a=_affine(field.a, A))


# --------------------------------------------------------------------------
# symmetrization


def _closest_point_on_triangle(p, a, b, c):
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = ab @ ap, ac @ ap
    if d1 <= 0 and d2 <= 0:
        return a
    bp = p - b
    d3, d4 = ab @ bp, ac @ bp
    if d3 >= 0 and d4 <= d3:
        return b
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        return a + d1 / (d1 - d3) * ab
    cp = p - c
    d5, d6 = ab @ cp, ac @ cp
    if d6 >= 0 and d5 <= d6:
        return c
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        return a + d2 / (d2 - d6) * ac
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        return b + (d4 - d3) / ((d4 - d3) + (d5 - d6)) * (c - b)
    denom = 1.0 / (va + vb + vc)
    return a + ab * (vb * denom) + ac * (vc * denom)


class SurfaceLocator:
    """Closest-triangle queries against a fixed mesh."""

    def __init__(self, mesh: TriMesh, k: int = 12):
        self.mesh = mesh
        self.tree = cKDTree(mesh.barycenters)
        self.k = min(k, mesh.n_triangles)

    def locate(self, p: np.ndarray) -> tuple[int, float]:
        _, cand = self.tree.query(p, k=self.k)
        cand = np.atleast_1d(cand)
        V, T = self.mesh.vertices, self.mesh.triangles
        best, best_d = -1, math.inf
        for t in sorted(int(c) for c in cand):
            q = _closest_point_on_triangle(p, *V[T[t]])
            dist = float(np.linalg.norm(p - q))
            if dist < best_d - 1e-12:
                best, best_d = t, dist
        return best, best_d


def reflection_group(planes: list[SymmetryPlane], cap: int = 64) -> list[np.ndarray]:
    """All distinct compositions of the plane reflections (identity first)."""
    gens = [pl.reflection() for pl in planes]
    group = [np.eye(4)]
    frontier = [np.eye(4)]
    while frontier and len(group) < cap:
        nxt = []
        for g in frontier:
            for r in gens:
                h = r @ g
                if not any(np.allclose(h, x, atol=1e-9) for x in group):
                    group.append(h)
                    nxt.append(h)
        frontier = nxt
    return group


def symmetrize(
    field: PsiField, mesh: TriMesh, planes: list[SymmetryPlane], tolerance: float
) -> PsiField:
    """Average the field over mirror-corresponding triangles.

    Each barycenter is mapped through every composition of the plane
    reflections and the triangle nearest to the image supplies a sample,
    pulled back through the same isometry. Directions are averaged as
    doubled-angle vectors, density and anisotropy arithmetically.
    """
    if not planes:
        return field
    group = reflection_group(planes)[1:]
    loc = SurfaceLocator(mesh)
    C = mesh.barycenters
    F = mesh.tangent_frames
    m = mesh.n_triangles
    mates = np.full((m, len(group)), -1, dtype=np.int64)
    gaps = np.zeros((m, len(group)))
    for t in range(m):
        for j, g in enumerate(group):
            img = g[:3, :3] @ C[t] + g[:3, 3]
            mates[t, j], gaps[t, j] = loc.locate(img)
    worst = gaps.max(axis=1)
    ok_frac = float(np.mean(worst <= tolerance))
    if ok_frac < 0.95:
        t_bad = int(np.argmax(worst))
        raise MeshError(
            f"mesh is not mirror-symmetric within {tolerance:g}: only {ok_frac:.1%} of triangles "
            f"have mates; worst is triangle {t_bad} (gap {worst[t_bad]:.3g})"
        )

    theta = field.angles(mesh)
    z = np.exp(2j * theta)
    d = field.d.astype(float).copy()
    a = field.a.astype(float).copy()
    count = np.ones(m)
    for j, g in enumerate(group):
        valid = gaps[:, j] <= tolerance
        s = mates[valid, j]
        t = np.flatnonzero(valid)
        back = field.u[s] @ g[:3, :3]  # applies g^-1 = g^T to row vectors
        ang = np.arctan2(np.sum(back * F[t, 1], 1), np.sum(back * F[t, 0], 1))
        z[t] += np.exp(2j * ang)
        d[t] += field.d[s]
        a[t] += field.a[s]
        count[t] += 1
    keep = np.abs(z) < 1e-12
    new_theta = np.where(keep, theta, 0.5 * np.angle(z))
    return field.replace(
        u=PsiField.directions(mesh, new_theta), d=d / count, a=np.maximum(a / count, 1.0)
    )


# --------------------------------------------------------------------------
# serialization


def save_psi(field: PsiField, path: str | Path) -> None:
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "psi_field",
        "triangles": [
            {"u_n": u.tolist(), "d": float(d), "a": float(a), "isotropic": bool(i)}
            for u, d, a, i in zip(field.u, field.d, field.a, field.isotropic)
        ],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_psi(path: str | Path) -> PsiField:
    data = json.loads(Path(path).read_text())
    tris = data["triangles"]
    return PsiField(
        np.array([t["u_n"] for t in tris], float).reshape(-1, 3),
        np.array([t["d"] for t in tris], float),
        np.array([t["a"] for t in tris], float),
        np.array([t.get("isotropic", False) for t in tris], bool),
    )
