"""Rigid-jointed 3D frame model of a grid-shell.

Every mesh edge becomes an Euler-Bernoulli beam with a solid circular
section and every vertex a moment-transmitting joint. Boundary joints are
pinned. The static solve gives the joint displacements; a linearized
buckling multiplier comes from the geometric stiffness of the resulting
axial forces.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import MeshError, PolyMesh

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EQUIVALENCE_TOL = 0.05
DENSE_EIG_LIMIT = 3000  # free DOFs below which the buckling problem is solved densely


class FrameError(RuntimeError):
    pass


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = 210e9
    poisson_ratio: float = 0.3
    density: float = 7850.0  # kg/m^3

    @property
    def shear_modulus(self) -> float:
        return self.youngs_modulus / (2 * (1 + self.poisson_ratio))


@dataclass(eq=False)
class FrameModel:
    joints: np.ndarray  # (n, 3)
    beams: np.ndarray  # (m, 2)
    diameter: float = 0.037
    material: Material = field(default_factory=Material)
    supports: np.ndarray | None = None  # (n,) pinned joints
    loads: np.ndarray | None = None  # (n, 3) N
    restraints: np.ndarray | None = None  # (n, 6) explicit DOF mask; overrides supports

    def __post_init__(self):
        self.joints = np.asarray(self.joints, float).reshape(-1, 3)
        self.beams = np.asarray(self.beams, dtype=np.int64).reshape(-1, 2)
        n = len(self.joints)
        if self.supports is None:
            self.supports = np.zeros(n, bool)
        if self.loads is None:
            self.loads = np.zeros((n, 3))
        self.loads = np.asarray(self.loads, float).reshape(n, 3)
        if self.diameter <= 0:
            raise ValueError("section diameter must be positive")
        if np.any(self.beams[:, 0] == self.beams[:, 1]):
            raise FrameError("beam joins a joint to itself")
        key = np.sort(self.beams, axis=1)
        if len(np.unique(key, axis=0)) != len(key):
            raise FrameError("duplicate beams")
        if np.any(self.lengths <= 0):
            raise FrameError(f"zero-length beams: {np.flatnonzero(self.lengths <= 0)[:5].tolist()}")

    @property
    def area(self) -> float:
        return math.pi * self.diameter**2 / 4

    @property
    def inertia(self) -> float:
        return math.pi * self.diameter**4 / 64

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.joints[self.beams[:, 1]] - self.joints[self.beams[:, 0]], axis=1)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def total_mass(self) -> float:
        return self.material.density * self.area * self.total_length

    def constrained(self) -> np.ndarray:
        """(n, 6) mask of fixed DOFs (3 translations, 3 rotations)."""
        if self.restraints is not None:
            return np.asarray(self.restraints, bool).reshape(-1, 6)
        mask = np.zeros((len(self.joints), 6), bool)
        mask[np.asarray(self.supports, bool), :3] = True
        return mask


@dataclass
class EvalReport:
    delta_max: float
    lambda_lin: float
    total_length: float
    total_mass: float
    displacements: np.ndarray  # (n, 3)
    axial_forces: np.ndarray  # (m,), tension positive
    reactions: np.ndarray  # (n, 3)
    buckling: str = "linearized"

    def to_json(self) -> dict:
        lam = self.lambda_lin
        return {
            "schema_version": SCHEMA_VERSION,
            "kind": "frame_report",
            "delta_max": self.delta_max,
            "lambda_lin": lam if math.isfinite(lam) else None,
            "lambda_lin_infinite": not math.isfinite(lam),
            "buckling": self.buckling,
            "total_length": self.total_length,
            "total_mass": self.total_mass,
            "displacements": self.displacements.tolist(),
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=1))


# --------------------------------------------------------------------------
# model construction


def fan_area(P: np.ndarray) -> float:
    """Area of a polygon by a fan of triangles around its vertex centroid."""
    c = P.mean(axis=0)
    A, B = P - c, np.roll(P, -1, axis=0) - c
    return 0.5 * float(np.linalg.norm(np.cross(A, B), axis=1).sum())


def nodal_loads(mesh: PolyMesh, load_density: float) -> np.ndarray:
    """Each face spreads load_density x area equally over its vertices, along -Z."""
    f = np.zeros((mesh.n_vertices, 3))
    for face in mesh.faces:
        share = load_density * fan_area(mesh.vertices[face]) / len(face)
        f[face, 2] -= share
    return f


def build_frame(
    mesh: PolyMesh,
    section_diameter: float = 0.037,
    material: Material = Material(),
    load_density: float = 1e3,
) -> FrameModel:
    supports = mesh.boundary_vertices
    if not supports.any():
        raise FrameError("mesh has no boundary: supports cannot be derived")
    return FrameModel(
        mesh.vertices.copy(), mesh.edges, section_diameter, material, supports, nodal_loads(mesh, load_density)
    )


# --------------------------------------------------------------------------
# element matrices


def _local_axes(d: np.ndarray) -> np.ndarray:
    """Rows: beam axis, local y, local z. Local y is horizontal unless the
    beam is vertical."""
    ex = d / np.linalg.norm(d)
    ref = np.array([0.0, 0.0, 1.0]) if abs(ex[2]) < 0.99 else np.array([0.0, 1.0, 0.0])
    ey = np.cross(ref, ex)
    ey /= np.linalg.norm(ey)
    ez = np.cross(ex, ey)
    return np.vstack([ex, ey, ez])


def _transform(axes: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(4), axes)


def element_stiffness(L: float, E: float, G: float, A: float, Iy: float, Iz: float, J: float) -> np.ndarray:
    """Standard 12x12 Euler-Bernoulli frame element in local coordinates,
    DOF order (u, v, w, rx, ry, rz) at each end."""
    k = np.zeros((12, 12))
    a = E * A / L
    t = G * J / L
    k[[0, 6], [0, 6]] = a
    k[0, 6] = k[6, 0] = -a
    k[[3, 9], [3, 9]] = t
    k[3, 9] = k[9, 3] = -t
    # bending in the local xy plane (v, rz)
    c = E * Iz / L**3
    idx = [1, 5, 7, 11]
    kb = c * np.array(
        [[12, 6 * L, -12, 6 * L], [6 * L, 4 * L * L, -6 * L, 2 * L * L],
         [-12, -6 * L, 12, -6 * L], [6 * L, 2 * L * L, -6 * L, 4 * L * L]]
    )
    k[np.ix_(idx, idx)] = kb
    # bending in the local xz plane (w, ry)
    c = E * Iy / L**3
    idx = [2, 4, 8, 10]
    kb = c * np.array(
        [[12, -6 * L, -12, -6 * L], [-6 * L, 4 * L * L, 6 * L, 2 * L * L],
         [-12, 6 * L, 12, 6 * L], [-6 * L, 2 * L * L, 6 * L, 4 * L * L]]
    )
    k[np.ix_(idx, idx)] = kb
    return k


def element_geometric_stiffness(L: float, N: float, A: float, Ip: float) -> np.ndarray:
    """Consistent geometric stiffness for axial force N (tension positive)."""
    g = np.zeros((12, 12))
    s = N / L
    bv = s * np.array(
        [[6 / 5, L / 10, -6 / 5, L / 10], [L / 10, 2 * L * L / 15, -L / 10, -L * L / 30],
         [-6 / 5, -L / 10, 6 / 5, -L / 10], [L / 10, -L * L / 30, -L / 10, 2 * L * L / 15]]
    )
    g[np.ix_([1, 5, 7, 11], [1, 5, 7, 11])] = bv
    bw = s * np.array(
        [[6 / 5, -L / 10, -6 / 5, -L / 10], [-L / 10, 2 * L * L / 15, L / 10, -L * L / 30],
         [-6 / 5, L / 10, 6 / 5, L / 10], [-L / 10, -L * L / 30, L / 10, 2 * L * L / 15]]
    )
    g[np.ix_([2, 4, 8, 10], [2, 4, 8, 10])] = bw
    g[[0, 6], [0, 6]] = s
    g[0, 6] = g[6, 0] = -s
    r = s * Ip / A
    g[[3, 9], [3, 9]] = r
    g[3, 9] = g[9, 3] = -r
    return g


def _beam_data(model: FrameModel):
    P = model.joints
    out = []
    for a, b in model.beams.tolist():
        d = P[b] - P[a]
        L = float(np.linalg.norm(d))
        out.append((a, b, L, _transform(_local_axes(d))))
    return out


def _dofs(a: int, b: int) -> np.ndarray:
    return np.concatenate([6 * a + np.arange(6), 6 * b + np.arange(6)])


def _assemble(blocks, n_dof: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for dofs, k in blocks:
        rows.append(np.repeat(dofs, 12))
        cols.append(np.tile(dofs, 12))
        vals.append(k.ravel())
    if not rows:
        return sp.csr_matrix((n_dof, n_dof))
    return sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_dof, n_dof)
    )


def assemble_stiffness(model: FrameModel) -> sp.csr_matrix:
    m = model.material
    A, I = model.area, model.inertia
    blocks = []
    for a, b, L, T in _beam_data(model):
        k = element_stiffness(L, m.youngs_modulus, m.shear_modulus, A, I, I, 2 * I)
        blocks.append((_dofs(a, b), T.T @ k @ T))
    return _assemble(blocks, 6 * len(model.joints))


def assemble_geometric_stiffness(model: FrameModel, axial: np.ndarray) -> sp.csr_matrix:
    A, I = model.area, model.inertia
    blocks = []
    for (a, b, L, T), N in zip(_beam_data(model), axial):
        g = element_geometric_stiffness(L, float(N), A, 2 * I)
        blocks.append((_dofs(a, b), T.T @ g @ T))
    return _assemble(blocks, 6 * len(model.joints))


# --------------------------------------------------------------------------
# analysis


def _free_dofs(model: FrameModel) -> np.ndarray:
    fixed = model.constrained().reshape(-1)
    if not fixed.any():
        raise FrameError("model has no supports")
    return np.flatnonzero(~fixed)


def _factor(K: sp.csc_matrix, free: np.ndarray):
    try:
        return spla.splu(K, permc_spec="MMD_AT_PLUS_A")
    except RuntimeError as exc:
        raise FrameError(f"singular stiffness, the frame is a mechanism ({exc})") from exc


def _mechanism_hint(K: sp.csc_matrix, free: np.ndarray) -> str:
    diag = np.abs(K.diagonal())
    j = int(np.argmin(diag))
    return f"joint {free[j] // 6}, DOF {free[j] % 6}"


def axial_forces(model: FrameModel, U: np.ndarray) -> np.ndarray:
    """Member axial forces (tension positive) from joint displacements (n, 6)."""
    E, A = model.material.youngs_modulus, model.area
    out = np.zeros(len(model.beams))
    for i, (a, b, L, T) in enumerate(_beam_data(model)):
        ex = T[:3, :3][0]
        out[i] = E * A / L * float(ex @ (U[b, :3] - U[a, :3]))
    return out


def solve_linear_static(model: FrameModel) -> EvalReport:
    """Linear static solve; the buckling field of the report is left NaN."""
    n = len(model.joints)
    free = _free_dofs(model)
    K = assemble_stiffness(model).tocsc()
    f = np.zeros(6 * n)
    f.reshape(n, 6)[:, :3] = model.loads
    u = np.zeros(6 * n)
    if np.any(f[free] != 0):
        Kff = K[free][:, free].tocsc()
        lu = _factor(Kff, free)
        uf = lu.solve(f[free])
        scale = np.linalg.norm(f[free])
        res = np.linalg.norm(Kff @ uf - f[free])
        if not np.all(np.isfinite(uf)) or res > 1e-8 * scale:
            raise FrameError(
                f"singular stiffness, the frame is a mechanism (zero-energy mode near {_mechanism_hint(Kff, free)})"
            )
        u[free] = uf
    U = u.reshape(n, 6)
    R = (K @ u - f).reshape(n, 6)[:, :3]
    R[~model.constrained()[:, :3]] = 0.0
    disp = U[:, :3]
    return EvalReport(
        delta_max=float(np.max(np.linalg.norm(disp, axis=1), initial=0.0)),
        lambda_lin=math.nan,
        total_length=model.total_length,
        total_mass=model.total_mass,
        displacements=disp.copy(),
        axial_forces=axial_forces(model, U),
        reactions=R,
    )


def estimate_linear_buckling(model: FrameModel, static: EvalReport | None = None) -> float:
    """Smallest positive lambda with (K + lambda K_g) phi = 0, or +inf when
    no member compression can destabilize the frame."""
    if static is None:
        static = solve_linear_static(model)
    N = static.axial_forces
    scale = max(float(np.max(np.abs(N), initial=0.0)), 1e-300)
    if np.all(np.abs(N) <= 1e-12 * scale) or scale <= 1e-300:
        return math.inf
    free = _free_dofs(model)
    K = assemble_stiffness(model).tocsc()[free][:, free]
    G = -assemble_geometric_stiffness(model, N).tocsc()[free][:, free]
    # K phi = lambda (-G) phi; nu = 1/lambda is an eigenvalue of (-G, K)
    if len(free) <= DENSE_EIG_LIMIT:
        nu = sla.eigh(G.toarray(), K.toarray(), eigvals_only=True)
        nu_max, ref = float(nu[-1]), float(np.abs(nu).max())
    else:
        lu = _factor(K, free)
        Kinv = spla.LinearOperator(K.shape, matvec=lu.solve, dtype=float)
        nu_max = float(spla.eigsh(G, k=1, M=K, Minv=Kinv, which="LA", return_eigenvectors=False)[0])
        ref = abs(nu_max)
    if nu_max <= 1e-12 * ref:
        return math.inf
    return 1.0 / nu_max


def evaluate(model: FrameModel) -> EvalReport:
    rep = solve_linear_static(model)
    rep.lambda_lin = estimate_linear_buckling(model, rep)
    return rep


def check_equivalence(a: FrameModel, b: FrameModel, tol: float = EQUIVALENCE_TOL) -> dict:
    """Relative total-length and total-mass differences of ``b`` against ``a``."""
    dl = abs(b.total_length - a.total_length) / a.total_length
    dm = abs(b.total_mass - a.total_mass) / a.total_mass
    return {"length_difference": dl, "mass_difference": dm, "tolerance": tol, "pass": bool(dl <= tol and dm <= tol)}


def save_axial_forces(model: FrameModel, report: EvalReport, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beam", "joint_a", "joint_b", "length", "axial_force"])
        for i, ((a, b), L, N) in enumerate(zip(model.beams.tolist(), model.lengths, report.axial_forces)):
            w.writerow([i, a, b, repr(float(L)), repr(float(N))])
