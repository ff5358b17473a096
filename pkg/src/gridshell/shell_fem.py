"""Linear membrane (constant-strain triangle) analysis of a surface.

Each triangle is a plane-stress CST in its own tangent plane; element
stiffnesses are rotated to global XYZ and assembled into one sparse system.
A membrane has no stiffness normal to a flat patch, so every vertex also
gets a tiny spring along its normal (1e-12 of the mean diagonal stiffness);
it only matters where the surface is locally flat.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshError, TriMesh
from .stress_field import PsiField

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STABILIZATION = 1e-12
MAX_ANISOTROPY = 1e6


class AnalysisError(RuntimeError):
    pass


@dataclass(frozen=True)
class ShellAnalysisConfig:
    youngs_modulus: float = 210e9
    poisson_ratio: float = 0.3
    thickness: float = 0.01
    load_density: float = 1e3  # N/m^2, projected, along -Z

    def __post_init__(self):
        if self.youngs_modulus <= 0:
            raise ValueError("Young's modulus must be positive")
        if not 0 <= self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if self.thickness <= 0:
            raise ValueError("thickness must be positive")
        if self.load_density < 0:
            raise ValueError("load density must be non-negative")

    def elasticity(self) -> np.ndarray:
        E, nu = self.youngs_modulus, self.poisson_ratio
        return E / (1 - nu * nu) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])


@dataclass(frozen=True, eq=False)
class StressTensorField:
    """Per-triangle 2x2 stress tensors in each triangle's tangent basis."""

    tensors: np.ndarray  # (m, 2, 2)
    frames: np.ndarray  # (m, 2, 3)
    displacements: np.ndarray | None = None  # (n, 3)
    reactions: np.ndarray | None = None  # (n, 3), zero at free vertices
    applied: np.ndarray | None = None  # (n, 3)


def _cst_operators(mesh: TriMesh):
    """Strain-displacement matrices in local 2D coordinates plus areas."""
    V, T = mesh.vertices, mesh.triangles
    F = mesh.tangent_frames
    rel = V[T] - V[T[:, :1]]  # (m, 3, 3)
    xy = np.einsum("mkd,mid->mik", F, rel)  # (m, 3 nodes, 2)
    x, y = xy[..., 0], xy[..., 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    two_a = x[:, 1] * y[:, 2] - x[:, 2] * y[:, 1]
    m = len(T)
    B = np.zeros((m, 3, 6))
    B[:, 0, 0::2] = b
    B[:, 1, 1::2] = c
    B[:, 2, 0::2] = c
    B[:, 2, 1::2] = b
    B /= two_a[:, None, None]
    # local-from-global displacement map per element, (m, 6, 9)
    R = np.zeros((m, 6, 9))
    for i in range(3):
        R[:, 2 * i : 2 * i + 2, 3 * i : 3 * i + 3] = F
    return B, R, 0.5 * two_a


def _vertex_normals(mesh: TriMesh) -> np.ndarray:
    n = np.zeros((mesh.n_vertices, 3))
    raw = mesh.triangle_normals_raw
    for k in range(3):
        np.add.at(n, mesh.triangles[:, k], raw)
    return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)


def projected_load(mesh: TriMesh, load_density: float) -> np.ndarray:
    """Nodal forces for a uniform load per unit plan area acting along -Z."""
    plan = 0.5 * np.abs(mesh.triangle_normals_raw[:, 2])
    f = np.zeros((mesh.n_vertices, 3))
    np.add.at(f[:, 2], mesh.triangles.reshape(-1), -np.repeat(load_density * plan / 3.0, 3))
    return f


def edge_traction(mesh: TriMesh, loaded: np.ndarray, traction: np.ndarray) -> np.ndarray:
    """Consistent nodal forces for a traction (force per unit length) on the
    boundary edges whose endpoints are both in ``loaded``."""
    f = np.zeros((mesh.n_vertices, 3))
    loaded = np.asarray(loaded, bool)
    for e in np.flatnonzero(mesh.boundary_edge_mask):
        a, b = mesh.edges[e]
        if loaded[a] and loaded[b]:
            half = 0.5 * np.linalg.norm(mesh.vertices[b] - mesh.vertices[a]) * np.asarray(traction, float)
            f[a] += half
            f[b] += half
    return f


def assemble_stiffness(mesh: TriMesh, cfg: ShellAnalysisConfig) -> sp.csr_matrix:
    B, R, area = _cst_operators(mesh)
    D = cfg.elasticity()
    k_local = cfg.thickness * area[:, None, None] * np.einsum("mji,jk,mkl->mil", B, D, B)
    k_global = np.einsum("mji,mjk,mkl->mil", R, k_local, R)
    dofs = (3 * mesh.triangles[:, :, None] + np.arange(3)).reshape(-1, 9)
    rows = np.repeat(dofs, 9, axis=1).ravel()
    cols = np.tile(dofs, (1, 9)).ravel()
    n = 3 * mesh.n_vertices
    return sp.csr_matrix((k_global.ravel(), (rows, cols)), shape=(n, n))


def assemble_and_solve(
    mesh: TriMesh,
    cfg: ShellAnalysisConfig = ShellAnalysisConfig(),
    *,
    loads: np.ndarray | None = None,
    fixed: np.ndarray | None = None,
) -> StressTensorField:
    """Solve the membrane problem and return per-triangle stresses.

    By default the projected gravity load is applied and every boundary
    vertex is pinned. ``loads`` (n, 3) replaces the load vector and ``fixed``
    (n, 3) bool selects constrained translational DOFs; both exist for
    analytic test cases such as the uniaxial patch test.
    """
    if fixed is None:
        if not mesh.boundary.any():
            raise AnalysisError("mesh has no boundary: pinned supports cannot be derived")
        fixed = np.repeat(mesh.boundary[:, None], 3, axis=1)
    fixed = np.asarray(fixed, bool).reshape(-1)
    if not fixed.any():
        raise AnalysisError("singular system: no supports")
    f = projected_load(mesh, cfg.load_density) if loads is None else np.asarray(loads, float)
    f = f.reshape(-1)

    K = assemble_stiffness(mesh, cfg)
    nrm = _vertex_normals(mesh)
    k_s = STABILIZATION * float(K.diagonal().mean())
    blocks = k_s * np.einsum("ni,nj->nij", nrm, nrm)
    idx = (3 * np.arange(mesh.n_vertices)[:, None] + np.arange(3)).reshape(-1, 3)
    S = sp.csr_matrix(
        (blocks.ravel(), (np.repeat(idx, 3, axis=1).ravel(), np.tile(idx, (1, 3)).ravel())),
        shape=K.shape,
    )
    Ks = (K + S).tocsc()

    free = np.flatnonzero(~fixed)
    u = np.zeros(3 * mesh.n_vertices)
    if np.any(f[free] != 0):
        Kff = Ks[free][:, free].tocsc()
        try:
            lu = spla.splu(Kff)
        except RuntimeError as exc:
            raise AnalysisError(f"singular stiffness matrix: {exc}") from exc
        uf = lu.solve(f[free])
        res = np.linalg.norm(Kff @ uf - f[free])
        if not np.all(np.isfinite(uf)) or res > 1e-10 * np.linalg.norm(f[free]):
            raise AnalysisError(f"linear solve did not converge (relative residual {res / np.linalg.norm(f[free]):.3e})")
        u[free] = uf

    reactions = np.where(fixed, Ks @ u - f, 0.0).reshape(-1, 3)
    U = u.reshape(-1, 3)
    B, R, _ = _cst_operators(mesh)
    ue = U[mesh.triangles].reshape(-1, 9)
    s = np.einsum("ij,mjk,mkl,ml->mi", cfg.elasticity(), B, R, ue)
    tensors = np.stack([np.stack([s[:, 0], s[:, 2]], -1), np.stack([s[:, 2], s[:, 1]], -1)], axis=1)
    return StressTensorField(tensors, mesh.tangent_frames.copy(), U, reactions, f.reshape(-1, 3))


def principal_decompose(field: StressTensorField, tie_tol: float = 1e-9) -> PsiField:
    """Split each tensor into (dominant direction, density, anisotropy).

    The dominant direction belongs to the eigenvalue of larger magnitude;
    density is that magnitude and anisotropy the ratio of magnitudes, so
    compression and tension are treated alike.
    """
    w, v = np.linalg.eigh(field.tensors)  # ascending
    mag = np.abs(w)
    big = np.argmax(mag, axis=1)
    rows = np.arange(len(w))
    d = mag[rows, big]
    small = mag[rows, 1 - big]
    vec2 = v[rows, :, big]  # eigenvectors are columns
    iso = (d - small) <= tie_tol * np.maximum(d, 1e-300)
    iso |= d == 0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a = np.where(small > 0, d / small, MAX_ANISOTROPY)
    a = np.minimum(a, MAX_ANISOTROPY)
    a[iso] = 1.0
    vec2[iso] = [1.0, 0.0]
    u = np.einsum("mk,mkd->md", vec2, field.frames)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return PsiField(u, d, a, iso)


def save_stress_field(field: StressTensorField, path: str | Path) -> None:
    data = {
        "schema_version": SCHEMA_VERSION,
        "kind": "stress_tensor_field",
        "triangles": [
            {"tensor": t.tolist(), "basis": b.tolist()} for t, b in zip(field.tensors, field.frames)
        ],
    }
    Path(path).write_text(json.dumps(data, indent=1))


def load_stress_field(path: str | Path, mesh: TriMesh | None = None) -> StressTensorField:
    """Read a tensor field, e.g. exported from an external FEA package."""
    data = json.loads(Path(path).read_text())
    tris = data["triangles"]
    tensors = np.array([t["tensor"] for t in tris], float).reshape(-1, 2, 2)
    frames = np.array([t["basis"] for t in tris], float).reshape(-1, 2, 3)
    if mesh is not None and len(tensors) != mesh.n_triangles:
        raise MeshError(f"stress field has {len(tensors)} triangles, mesh has {mesh.n_triangles}")
    if not np.allclose(tensors, tensors.transpose(0, 2, 1)):
        raise ValueError("stress tensors must be symmetric")
    gram = np.einsum("mid,mjd->mij", frames, frames)
    if not np.allclose(gram, np.eye(2), atol=1e-9):
        raise ValueError("tangent bases must be orthonormal")
    return StressTensorField(tensors, frames)
