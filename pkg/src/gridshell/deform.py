"""Turn the stress-induced metric into a Euclidean one by deforming the
surface, refining wherever deformed edges grow longer than q."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshError, TriMesh, save_obj, split_with_companions
from .stress_field import PsiField

log = logging.getLogger(__name__)


class DeformationError(RuntimeError):
    pass


BENDING = 1e-2
ROUND_TOL = 1e-5  # relative energy change that ends an intermediate refinement round


def target_frame(psi: PsiField, mesh: TriMesh) -> np.ndarray:
    """Per-triangle W = rot(theta) diag(d, d/a) rot(theta)^T in the
    triangle's tangent basis, theta being the angle of the dominant
    direction."""
    if np.any(psi.d <= 0) or np.any(psi.a < 1):
        raise ValueError("target frames need d > 0 and a >= 1")
    th = psi.angles(mesh)
    c, s = np.cos(th), np.sin(th)
    l1, l2 = psi.d, psi.d / psi.a
    W = np.empty((len(th), 2, 2))
    W[:, 0, 0] = l1 * c * c + l2 * s * s
    W[:, 1, 1] = l1 * s * s + l2 * c * c
    W[:, 0, 1] = W[:, 1, 0] = (l1 - l2) * c * s
    return W


def _gradients(mesh: TriMesh):
    """Barycentric-function gradients (m, 3, 2) in local tangent coordinates."""
    V, T = mesh.vertices, mesh.triangles
    F = mesh.tangent_frames
    xy = np.einsum("mkd,mid->mik", F, V[T] - V[T[:, :1]])
    x, y = xy[..., 0], xy[..., 1]
    two_a = x[:, 1] * y[:, 2] - x[:, 2] * y[:, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    return np.stack([b, c], axis=2) / two_a[:, None, None], 0.5 * two_a


def vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    raw = np.cross(vertices[triangles[:, 1]] - vertices[triangles[:, 0]], vertices[triangles[:, 2]] - vertices[triangles[:, 0]])
    n = np.zeros_like(vertices)
    for k in range(3):
        np.add.at(n, triangles[:, k], raw)
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)


def orientation(mesh: TriMesh) -> np.ndarray:
    """Cosine between each triangle's normal and the mean normal of its
    corners; a triangle folded over its neighbours scores <= 0."""
    V, T = mesh.vertices, mesh.triangles
    ref = vertex_normals(V, T)[T].sum(axis=1)
    ref /= np.maximum(np.linalg.norm(ref, axis=1, keepdims=True), 1e-300)
    return np.sum(mesh.triangle_normals * ref, axis=1)


def fold_overs(mesh: TriMesh) -> np.ndarray:
    return np.flatnonzero(orientation(mesh) <= 0)


def _best_rotations(J: np.ndarray, W: np.ndarray, ref_normals: np.ndarray) -> np.ndarray:
    """Closest 3x2 orthonormal frames to J W^T whose normal agrees with the
    reference normals."""
    U, S, Vt = np.linalg.svd(J @ np.transpose(W, (0, 2, 1)), full_matrices=False)
    R = U @ Vt
    flip = np.sum(np.cross(R[:, :, 0], R[:, :, 1]) * ref_normals, axis=1) < 0
    if flip.any():
        U2 = U[flip].copy()
        U2[:, :, 1] *= -1
        R[flip] = U2 @ Vt[flip]
    return R


def _hinges(mesh: TriMesh) -> np.ndarray:
    """(k, 4) vertex quadruples (a, b, c, d) for interior edges: a->b runs
    along the first triangle (a, b, c); the second triangle is (b, a, d)."""
    inner = np.flatnonzero(mesh.edge_triangle_count == 2)
    T = mesh.triangles
    t0, t1 = mesh.edge_triangles[inner].T
    k = np.argmax(mesh.triangle_edges[t0] == inner[:, None], axis=1)
    a = T[t0, k]
    b = T[t0, (k + 1) % 3]
    c = T[t0, (k + 2) % 3]
    d = T[t1].sum(axis=1) - a - b
    return np.column_stack([a, b, c, d]).astype(np.int64)


def _block_pattern(n: int, cells: list[np.ndarray]) -> dict:
    """CSR structure of a 3x3-block matrix coupling every vertex pair that
    shares a cell. ``positions[k]`` holds, for each cell of ``cells[k]``,
    the data index of every entry of its dense (3c, 3c) block in dof order
    (3 * vertex + axis)."""
    keys = [(C[:, :, None] * n + C[:, None, :]).ravel() for C in cells]
    keys.append(np.arange(n) * (n + 1))
    uniq, inv = np.unique(np.concatenate(keys), return_inverse=True)
    bi, bj = uniq // n, uniq % n
    counts = np.bincount(bi, minlength=n)
    start = np.concatenate([[0], np.cumsum(counts)[:-1]])
    r = np.arange(len(uniq)) - start[bi]
    p = np.arange(3)
    # data index of entry (p, q) of block b
    posmap = 9 * start[bi][:, None, None] + 3 * counts[bi][:, None, None] * p[None, :, None] + 3 * r[:, None, None] + p[None, None, :]
    indices = np.empty(9 * len(uniq), dtype=np.int64)
    indices[posmap.ravel()] = np.repeat(3 * bj, 9) + np.tile(p, 3 * len(uniq))
    rowstart = 9 * start[:, None] + 3 * counts[:, None] * p[None, :]
    indptr = np.append(rowstart.ravel(), 9 * len(uniq))
    positions, off = [], 0
    for C in cells:
        m, c = C.shape
        blk = posmap[inv[off : off + m * c * c]].reshape(m, c, c, 3, 3)
        positions.append(np.transpose(blk, (0, 1, 3, 2, 4)).reshape(m, 3 * c, 3 * c))
        off += m * c * c
    diag = posmap[inv[off:]][:, p, p].ravel()
    return dict(indptr=indptr, indices=indices, nnz=9 * len(uniq), positions=positions, diagonal=diag)


def _hinge_angles(X: np.ndarray, H: np.ndarray, with_gradient: bool = False):
    """Signed bending angle of each hinge (0 when flat) and optionally its
    gradient with respect to the four vertices, (k, 4, 3)."""
    a, b, c, d = (X[H[:, i]] for i in range(4))
    e = b - a
    le = np.linalg.norm(e, axis=1)
    eh = e / le[:, None]
    N1 = np.cross(e, c - a)
    N2 = np.cross(a - b, d - b)
    l1 = np.linalg.norm(N1, axis=1)
    l2 = np.linalg.norm(N2, axis=1)
    n1 = N1 / l1[:, None]
    n2 = N2 / l2[:, None]
    theta = np.arctan2(np.sum(np.cross(n1, n2) * eh, axis=1), np.sum(n1 * n2, axis=1))
    if not with_gradient:
        return theta
    h1 = l1 / le
    h2 = l2 / le
    ee = le * le
    # tilt of each wing under a normal displacement of one of its corners
    k1 = np.stack([-np.sum((b - c) * e, 1) / ee, -np.sum((c - a) * e, 1) / ee, np.ones(len(e)), np.zeros(len(e))], 1) / h1[:, None]
    k2 = np.stack([-np.sum((b - d) * e, 1) / ee, -np.sum((d - a) * e, 1) / ee, np.zeros(len(e)), np.ones(len(e))], 1) / h2[:, None]
    grad = -k1[:, :, None] * n1[:, None, :] - k2[:, :, None] * n2[:, None, :]
    return theta, grad


def _frames_and_hessians(J: np.ndarray, W: np.ndarray, ref_normals: np.ndarray, project: bool = False):
    """Best frames R (as in the local step) and the Hessian of
    |J - R(J) W|^2 with respect to the row-major entries of J, optionally
    projected onto the PSD cone per triangle."""
    m = len(J)
    U, S, Vt = np.linalg.svd(J @ W, full_matrices=True)  # W symmetric
    R = U[:, :, :2] @ Vt
    flip = np.sum(np.cross(R[:, :, 0], R[:, :, 1]) * ref_normals, axis=1) < 0
    if flip.any():
        U2 = U[flip][:, :, :2].copy()
        U2[:, :, 1] *= -1
        R[flip] = U2 @ Vt[flip]
    # second variation of the singular-value sum in the rotated basis
    # A = U^T dM V: in-plane twist, then the two out-of-plane components
    s = np.maximum(S, 1e-12 * max(float(S.max()), 1e-300))
    c = np.zeros(6)
    c[1], c[2] = 1.0, -1.0
    HA = np.outer(c, c)[None] / (s[:, 0] + s[:, 1])[:, None, None]
    HA[:, 4, 4] += 1.0 / s[:, 0]
    HA[:, 5, 5] += 1.0 / s[:, 1]
    P = W @ np.transpose(Vt, (0, 2, 1))
    L = np.einsum("mdi,mkj->mijdk", U, P).reshape(m, 6, 6)  # vec(A) = L vec(dJ)
    H = 2.0 * (np.eye(6)[None] - np.transpose(L, (0, 2, 1)) @ HA @ L)
    H[flip] = 2.0 * np.eye(6)
    if project:
        w, v = np.linalg.eigh(H)
        H = (v * np.maximum(w, 0.0)[:, None, :]) @ np.transpose(v, (0, 2, 1))
    return R, H


def deform(
    mesh: TriMesh,
    frames: np.ndarray,
    init: np.ndarray | None = None,
    tol: float = 1e-8,
    max_iters: int = 200,
    bending: float = BENDING,
) -> TriMesh:
    """Shape matching: each triangle wants to become its rest shape mapped
    by W (up to rotation).

    Minimizes sum_t area_t |J_t - R_t W_t|_F^2 over vertex positions and
    per-triangle frames R_t, with the area-weighted centroid pinned to its
    rest position. Larger W enlarges the triangle.

    A small ``bending`` term, sum_e w_e (theta_e - rest theta_e)^2 over the
    dihedral angles of interior edges, keeps M' from creasing where the
    target metric cannot be embedded; it vanishes whenever the targets are
    met by a similarity of the rest shape (identity, uniform scale) or by a
    flat map of a flat mesh.

    The frames are eliminated in closed form (the local step of local/global
    solvers) and the positions are found by Newton steps damped towards the
    local/global step (Levenberg-Marquardt), stopping at a relative energy
    change below ``tol``. Per-triangle PSD projection is avoided on purpose:
    it discards the negative curvature of compressed triangles and slows
    the solver to a crawl exactly where the metric is hard to embed.
    """
    frames = np.asarray(frames, float)
    if np.any(np.linalg.eigvalsh(0.5 * (frames + np.transpose(frames, (0, 2, 1))))[:, 0] <= 0):
        raise ValueError("target frames must be symmetric positive definite")
    frames = 0.5 * (frames + np.transpose(frames, (0, 2, 1)))
    G, area = _gradients(mesh)
    n, T = mesh.n_vertices, mesh.triangles
    m = len(T)
    w = mesh.vertex_areas
    w = w / w.sum()
    centroid = w @ mesh.vertices
    # B maps the 9 corner coordinates of a triangle to the 6 entries of J
    B = np.zeros((m, 6, 9))
    for i in range(3):
        for d in range(3):
            B[:, 2 * d, 3 * i + d] = G[:, i, 0]
            B[:, 2 * d + 1, 3 * i + d] = G[:, i, 1]
    dofs = (3 * T[:, :, None] + np.arange(3)).reshape(m, 9)
    hinge = _hinges(mesh) if bending > 0 else np.zeros((0, 4), dtype=np.int64)
    rest_angle = _hinge_angles(mesh.vertices, hinge)
    inner = mesh.edge_triangles[mesh.edge_triangle_count == 2]
    wsq = 0.5 * np.sum(frames**2, axis=(1, 2))
    w_hinge = bending * mesh.edge_lengths[mesh.edge_triangle_count == 2] ** 2 * 0.5 * (wsq[inner[:, 0]] + wsq[inner[:, 1]])
    hdofs = (3 * hinge[:, :, None] + np.arange(3)).reshape(-1, 12)

    def bend(theta):
        return np.angle(np.exp(1j * (theta - rest_angle)))

    def energy(X):
        J = np.einsum("mid,mik->mdk", X[T], G)  # (m, 3, 2)
        ref = vertex_normals(X, T)[T].sum(axis=1)
        R = _best_rotations(J, frames, ref)
        Eb = float(np.sum(w_hinge * bend(_hinge_angles(X, hinge)) ** 2)) if len(hinge) else 0.0
        return float(np.sum(area * np.sum((J - R @ frames) ** 2, axis=(1, 2)))) + Eb, J, ref

    X = np.array(mesh.vertices if init is None else init, float)
    if init is None:
        # start from the best uniform scaling of the rest shape
        X = centroid + float(np.sum(area * np.sqrt(np.linalg.det(frames))) / area.sum()) * (X - centroid)
    X += centroid - w @ X
    scale = float(np.sum(area * np.sum(frames**2, axis=(1, 2))))
    E, J, ref = energy(X)
    if E <= 1e-24 * scale:
        return mesh.with_vertices(X)

    # the sparsity pattern never changes: build it once from vertex pairs
    # and assemble values with bincount; the matrix is symmetric so CSR
    # arrays double as CSC
    N = 3 * n
    pattern = _block_pattern(n, [T, hinge])
    indptr, indices, nnz = pattern["indptr"], pattern["indices"], pattern["nnz"]
    inv_tri, inv_hinge = (x.ravel() for x in pattern["positions"])
    inv_diag = pattern["diagonal"]

    def values(tri, hin=None):
        out = np.bincount(inv_tri, tri.ravel(), nnz)
        if hin is not None and len(hin):
            out += np.bincount(inv_hinge, hin.ravel(), nnz)
        return out

    # Dirichlet matrix of the local/global step, used as the damping term
    BB = area[:, None, None] * np.transpose(B, (0, 2, 1)) @ B
    lap = values(BB)
    # translations are a null space of both H and lap; a tiny mass term
    # removes it and the centroid is re-pinned after every accepted step
    mass = np.repeat(w, 3) / w.mean()

    change = np.nan
    mu = 1e-3
    lap_scale = 1.0 / max(float(lap[inv_diag].mean()), 1e-300)
    for it in range(max_iters):
        if E <= 1e-24 * scale:
            return mesh.with_vertices(X)
        R, HJ = _frames_and_hessians(J, frames, ref)
        gJ = 2.0 * area[:, None] * (J - R @ frames).reshape(m, 6)
        g = np.zeros(3 * n)
        np.add.at(g, dofs.ravel(), np.einsum("mji,mj->mi", B, gJ).ravel())
        HX = area[:, None, None] * np.transpose(B, (0, 2, 1)) @ HJ @ B
        Hb = None
        if len(hinge):
            theta, dth = _hinge_angles(X, hinge, with_gradient=True)
            dth = dth.reshape(-1, 12)
            np.add.at(g, hdofs.ravel(), (2.0 * (w_hinge * bend(theta))[:, None] * dth).ravel())
            Hb = 2.0 * w_hinge[:, None, None] * dth[:, :, None] * dth[:, None, :]
        H = values(HX, Hb)
        Hscale = float(np.abs(H[inv_diag]).mean()) * lap_scale
        E_new = np.inf
        for _ in range(40):
            data = H + (mu * Hscale) * lap
            data[inv_diag] += 1e-10 * float(np.abs(data[inv_diag]).mean()) * mass
            K = sp.csc_matrix((data, indices, indptr), shape=(N, N))
            try:
                step = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True)).solve(-g).reshape(n, 3)
                step -= w @ step
            except RuntimeError:
                step = None
            if step is not None and np.all(np.isfinite(step)):
                slope = float(g @ step.ravel())
                if slope < 0:
                    # a short backtrack is much cheaper than a new factorization
                    for alpha in (1.0, 0.5, 0.25):
                        E_new, J_new, ref_new = energy(X + alpha * step)
                        if E_new <= E + 1e-4 * alpha * slope:
                            break
                    if E_new <= E + 1e-4 * alpha * slope:
                        step = alpha * step
                        if alpha == 1.0:
                            mu = max(mu / 3.0, 1e-8)
                        break
            mu *= 10.0
            if mu > 1e12:
                E_new = np.inf
                break
        log.debug("newton %d: E %.9e mu %.1e |g| %.3e", it, E, mu, np.linalg.norm(g))
        if E_new < E:
            change = (E - E_new) / E
            X, E, J, ref = X + step, E_new, J_new, ref_new
        else:
            change = 0.0  # no descent left at working precision
        if change <= tol:
            log.debug("deform converged after %d Newton steps (energy %.6e)", it + 1, E)
            return mesh.with_vertices(X)
    raise DeformationError(
        f"deformation did not converge in {max_iters} iterations "
        f"(energy {E:.6e}, last relative change {change:.3e})"
    )


@dataclass(eq=False)
class DeformedDomain:
    """Refined original surface, its deformed copy (same connectivity) and
    the refinement genealogy."""

    mesh: TriMesh
    deformed: TriMesh
    psi: PsiField
    frames: np.ndarray
    q: float
    triangle_origin: np.ndarray
    genealogy: list[dict[int, tuple[int, int, float]]] = field(default_factory=list)
    rounds: int = 0

    def save(self, obj_path: str | Path, genealogy_path: str | Path | None = None) -> None:
        save_obj(self.deformed, obj_path)
        if genealogy_path is not None:
            data = {
                "schema_version": 1,
                "kind": "refinement_genealogy",
                "q": self.q,
                "rounds": [
                    [{"vertex": v, "parent_edge": [a, b], "t": t} for v, (a, b, t) in sorted(g.items())]
                    for g in self.genealogy
                ],
            }
            Path(genealogy_path).write_text(json.dumps(data, indent=1))


def refine_until_fit(
    mesh: TriMesh,
    psi: PsiField,
    q: float,
    max_rounds: int = 20,
    tol: float = 1e-8,
    max_iters: int = 200,
) -> DeformedDomain:
    """Alternate deformation and midpoint refinement of M until every edge
    of the deformed surface is at most q long."""
    if q <= 0:
        raise ValueError("q must be positive")
    if len(psi) != mesh.n_triangles:
        raise MeshError("field and mesh disagree on the triangle count")
    origin = np.arange(mesh.n_triangles)
    init = None
    genealogy = []
    # intermediate rounds only decide which edges to split, so they stop
    # early; the last round is polished to the full tolerance
    loose = max(tol, ROUND_TOL)
    for rnd in range(max_rounds + 1):
        frames = target_frame(psi, mesh)
        deformed = deform(mesh, frames, init=init, tol=loose, max_iters=max_iters)
        long_edges = mesh.edges[deformed.edge_lengths > q]
        if len(long_edges) == 0 and loose > tol:
            deformed = deform(mesh, frames, init=deformed.vertices, tol=tol, max_iters=max_iters)
            long_edges = mesh.edges[deformed.edge_lengths > q]
        if len(long_edges) == 0:
            return DeformedDomain(mesh, deformed, psi, frames, q, origin, genealogy, rnd)
        if rnd == max_rounds:
            break
        log.info("refinement round %d: splitting %d edges", rnd + 1, len(long_edges))
        mesh, smap, (init,) = split_with_companions(mesh, map(tuple, long_edges), [deformed.vertices])
        psi = psi.take(smap.triangle_parent).reproject(mesh)
        origin = origin[smap.triangle_parent]
        genealogy.append(smap.vertex_parents)
    raise DeformationError(
        f"refinement exceeded {max_rounds} rounds with {len(long_edges)} edges still longer than q={q:g}"
    )


def map_back(domain: DeformedDomain, points) -> np.ndarray:
    """Evaluate (triangle, barycentric) locations on M′ at the same
    barycentric coordinates of the matching triangle of M."""
    out = []
    V, T = domain.mesh.vertices, domain.mesh.triangles
    for t, bary in points:
        t = int(t)
        if not 0 <= t < len(T):
            raise IndexError(f"triangle index {t} out of range")
        bary = np.asarray(bary, float)
        if np.any(bary < -1e-9) or abs(bary.sum() - 1) > 1e-9:
            raise ValueError(f"invalid barycentric coordinates {bary}")
        out.append(bary @ V[T[t]])
    return np.array(out).reshape(-1, 3)
