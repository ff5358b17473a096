"""Polygon regularization, face quality metrics and mirror welding.

Each face is pulled toward a "stretched regular" version of itself: the
face is un-stretched along its principal axes, replaced by the regular
polygon of the same perimeter, rigidly aligned and stretched back. Vertices
then move toward the average of the targets their faces ask for.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .mesh import MeshError, PolyMesh
from .stress_field import SymmetryPlane, reflection_group

log = logging.getLogger(__name__)

AREA_EPS = 1e-14


@dataclass(frozen=True)
class RegularizerConfig:
    damping: float = 0.5
    max_iters: int = 100
    tol: float = 1e-6  # largest vertex move, meters
    fix_boundary: bool = True

    def __post_init__(self):
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")
        if self.max_iters < 0:
            raise ValueError("max_iters must be non-negative")
        if self.tol < 0:
            raise ValueError("tol must be non-negative")


def _pca(P: np.ndarray):
    c = P.mean(axis=0)
    X = P - c
    w, v = np.linalg.eigh(X.T @ X / len(P))
    return c, X, w[::-1], v[:, ::-1]  # descending variance


def vector_area(P: np.ndarray) -> float:
    """Area of a (possibly non-planar) closed polygon."""
    return 0.5 * float(np.linalg.norm(np.cross(P, np.roll(P, -1, axis=0)).sum(axis=0)))


def perimeter(P: np.ndarray) -> float:
    return float(np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1).sum())


def per_polygon_targets(P) -> np.ndarray:
    """Target positions for one face (n, 3): the nearest stretched regular
    polygon of equal un-stretched perimeter. Degenerate faces come back
    unchanged with a warning."""
    P = np.asarray(P, float)
    if P.ndim != 2 or len(P) < 3:
        raise ValueError("a face needs at least 3 vertices")
    return batch_targets(P[None])[0]


def batch_targets(P: np.ndarray) -> np.ndarray:
    """Targets for a stack of faces of equal arity (k, n, 3).

    Per face: principal axes of the vertices, scale both in-plane axes to
    unit variance, take the regular n-gon of the same perimeter, align it
    by the best rotation over all cyclic shifts, then undo the scaling.
    """
    P = np.asarray(P, float)
    k, n, _ = P.shape
    c = P.mean(axis=1, keepdims=True)
    X = P - c
    w, v = np.linalg.eigh(np.einsum("kni,knj->kij", X, X) / n)
    var, axes = w[:, ::-1], v[:, :, ::-1]
    ok = (var[:, 0] > 0) & (var[:, 1] > AREA_EPS * var[:, 0])
    if not ok.all():
        log.warning("%d zero-area faces skipped by the regularizer", int((~ok).sum()))
    sd = np.sqrt(np.maximum(var[:, :2], 1e-300))
    Y = np.einsum("kni,kij->knj", X, axes[:, :, :2]) / sd[:, None, :]
    Yn = np.roll(Y, -1, axis=1)
    signed = 0.5 * np.sum(Y[..., 0] * Yn[..., 1] - Y[..., 1] * Yn[..., 0], axis=1)
    p = np.linalg.norm(Yn - Y, axis=2).sum(axis=1)
    r = p / (2 * n * math.sin(math.pi / n))
    ang = 2 * math.pi * np.arange(n) / n * np.where(signed >= 0, 1.0, -1.0)[:, None]
    reg = r[:, None, None] * np.stack([np.cos(ang), np.sin(ang)], axis=2)
    Yc = Y - Y.mean(axis=1, keepdims=True)
    best = np.zeros_like(Y)
    best_err = np.full(k, np.inf)
    for shift in range(n):
        Q = np.roll(reg, shift, axis=1)
        Q = Q - Q.mean(axis=1, keepdims=True)
        th = np.arctan2(np.sum(Q[..., 0] * Yc[..., 1] - Q[..., 1] * Yc[..., 0], axis=1), np.sum(Q * Yc, axis=(1, 2)))
        cs, sn = np.cos(th)[:, None], np.sin(th)[:, None]
        Z = np.stack([cs * Q[..., 0] - sn * Q[..., 1], sn * Q[..., 0] + cs * Q[..., 1]], axis=2)
        Z += Y.mean(axis=1, keepdims=True)
        err = np.sum((Z - Y) ** 2, axis=(1, 2))
        better = err < best_err - 1e-12 * np.maximum(np.where(np.isfinite(best_err), best_err, 1.0), 1.0)
        best[better] = Z[better]
        best_err[better] = err[better]
    T = c + np.einsum("knj,kij->kni", best * sd[:, None, :], axes[:, :, :2])
    T[~ok] = P[~ok]
    return T


def all_targets(V: np.ndarray, faces: list[list[int]]) -> list[np.ndarray]:
    """Targets of every face, computed in batches of equal arity."""
    out: list = [None] * len(faces)
    by_n: dict[int, list[int]] = {}
    for i, f in enumerate(faces):
        by_n.setdefault(len(f), []).append(i)
    for n, ids in by_n.items():
        T = batch_targets(V[np.array([faces[i] for i in ids])])
        for i, t in zip(ids, T):
            out[i] = t
    return out


def planarity(P) -> float:
    """Mean distance of the vertices to their least-squares plane divided by
    half the perimeter."""
    P = np.asarray(P, float)
    half = 0.5 * perimeter(P)
    if half <= 0:
        raise ValueError("face has zero perimeter")
    _, X, _, axes = _pca(P)
    return float(np.mean(np.abs(X @ axes[:, 2]))) / half


def regularity(P, targets=None) -> float:
    """Squared distance of the vertices to their targets over face area."""
    P = np.asarray(P, float)
    area = vector_area(P)
    if area <= 0:
        raise ValueError("face has zero area")
    T = per_polygon_targets(P) if targets is None else targets
    return float(np.sum((P - T) ** 2)) / area


def face_metrics(mesh: PolyMesh) -> PolyMesh:
    """Copy of ``mesh`` with per-face planarity and regularity filled in."""
    V = mesh.vertices
    plan = np.array([planarity(V[f]) for f in mesh.faces])
    reg = np.array([regularity(V[f]) if vector_area(V[f]) > 0 else math.nan for f in mesh.faces])
    return PolyMesh(V.copy(), [list(f) for f in mesh.faces], plan, reg, *_carry(mesh))


def _carry(mesh: PolyMesh):
    return tuple(None if x is None else x.copy() for x in (mesh.fixed, mesh.face_seeds, mesh.seed_points))


def _fixed_mask(mesh: PolyMesh, cfg: RegularizerConfig) -> np.ndarray:
    fixed = np.zeros(mesh.n_vertices, bool)
    if cfg.fix_boundary:
        fixed |= mesh.boundary_vertices
        if mesh.fixed is not None:
            fixed |= mesh.fixed
    return fixed


def target_residual(mesh: PolyMesh) -> float:
    """Total squared distance of face vertices to their current targets."""
    V = mesh.vertices
    return float(sum(np.sum((V[f] - per_polygon_targets(V[f])) ** 2) for f in mesh.faces))


def regularize(mesh: PolyMesh, cfg: RegularizerConfig = RegularizerConfig(), trace: list | None = None) -> PolyMesh:
    """Alternate per-face target fitting and damped per-vertex averaging.

    Free vertices move by ``damping`` toward the mean of the targets of
    their incident faces. If ``trace`` is a list, one dict per iteration
    (residual, mean regularity, largest move) is appended to it.
    """
    mesh.validate()
    V = mesh.vertices.copy()
    fixed = _fixed_mask(mesh, cfg)
    idx = np.concatenate([np.asarray(f, dtype=np.int64) for f in mesh.faces]) if mesh.faces else np.zeros(0, np.int64)
    count = np.bincount(idx, minlength=len(V)).astype(float)
    free = ~fixed & (count > 0)
    for it in range(cfg.max_iters):
        targets = all_targets(V, mesh.faces)
        acc = np.zeros_like(V)
        np.add.at(acc, idx, np.concatenate(targets) if targets else np.zeros((0, 3)))
        mean = acc[free] / count[free, None]
        step = cfg.damping * (mean - V[free])
        move = float(np.max(np.linalg.norm(step, axis=1), initial=0.0))
        if trace is not None:
            res = float(sum(np.sum((V[f] - t) ** 2) for f, t in zip(mesh.faces, targets)))
            regs = [np.sum((V[f] - t) ** 2) / a for f, t in zip(mesh.faces, targets)
                    if (a := vector_area(V[f])) > 0]
            trace.append({"iteration": it, "residual": res, "mean_regularity": float(np.mean(regs)) if regs else 0.0, "max_move": move})
        V[free] += step
        if move <= cfg.tol:
            log.debug("regularize converged after %d iterations", it + 1)
            break
    else:
        log.info("regularize stopped at the iteration cap (%d)", cfg.max_iters)
    _, seeds, points = _carry(mesh)
    out = PolyMesh(V, [list(f) for f in mesh.faces], fixed=fixed if mesh.fixed is None else mesh.fixed.copy(),
                   face_seeds=seeds, seed_points=points)
    return face_metrics(out)


def save_metrics_csv(mesh: PolyMesh, path: str | Path) -> None:
    m = mesh if mesh.planarity is not None and mesh.regularity is not None else face_metrics(mesh)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face", "arity", "planarity", "regularity"])
        for i, f in enumerate(m.faces):
            w.writerow([i, len(f), repr(float(m.planarity[i])), repr(float(m.regularity[i]))])


# --------------------------------------------------------------------------
# mirror welding


def _snap(V: np.ndarray, planes: list[SymmetryPlane], tol: float):
    """Project vertices within ``tol`` of a plane onto it; returns the
    snapped positions and a (n, planes) on-plane mask."""
    V = V.copy()
    on = np.zeros((len(V), len(planes)), bool)
    for j, pl in enumerate(planes):
        on[:, j] = np.abs(pl.signed_distance(V)) <= tol
    for _ in range(8):  # alternate projections for vertices on several planes
        for j, pl in enumerate(planes):
            sd = pl.signed_distance(V[on[:, j]])
            V[on[:, j]] -= sd[:, None] * np.asarray(pl.normal)
    return V, on


def _chain(half_edges: list[tuple[int, int]]) -> list[int] | None:
    nxt: dict[int, int] = {}
    for a, b in half_edges:
        if a in nxt:
            return None
        nxt[a] = b
    if not nxt:
        return None
    start = min(nxt)
    loop = [start]
    while True:
        v = nxt.get(loop[-1])
        if v is None:
            return None
        if v == start:
            break
        loop.append(v)
        if len(loop) > len(nxt):
            return None
    return loop if len(loop) == len(nxt) else None


def symmetrize_tessellation(half: PolyMesh, planes: list[SymmetryPlane], weld_tol: float) -> PolyMesh:
    """Reflect a sector tessellation into the full domain.

    Vertices within ``weld_tol`` of a plane are snapped onto it, the sector
    is copied through every composition of the reflections, coincident
    vertices are merged, and a face whose seed lies on a plane is fused
    with its mirror image across that plane. Other faces meeting their
    mirror image on a plane keep the shared edge. Interior vertices left
    with only two edges on a plane are dropped from their faces.
    """
    if not planes:
        return half
    V0, on0 = _snap(half.vertices, planes, weld_tol)
    if on0.any() and half.seed_points is None:
        raise MeshError("seed positions are needed to tell faces split by a plane from mirror pairs")
    group = reflection_group(planes)
    n0 = len(V0)
    verts, faces, fixed, on_plane, seeds = [], [], [], [], []
    for g in group:
        M, t = g[:3, :3], g[:3, 3]
        verts.append(V0 @ M.T + t)
        flip = np.linalg.det(M) < 0
        base = (len(verts) - 1) * n0
        faces += [[base + i for i in (f[::-1] if flip else f)] for f in half.faces]
        fixed.append(np.zeros(n0, bool) if half.fixed is None else half.fixed.copy())
        on_plane.append(on0.any(axis=1))
        if half.seed_points is not None:
            seeds.append(half.seed_points @ M.T + t)
    # straddle[f, j]: the seed of face f lies on plane j
    straddle = np.zeros((len(faces), len(planes)), bool)
    if seeds:
        S = np.concatenate(seeds)
        for j, pl in enumerate(planes):
            straddle[:, j] = np.abs(pl.signed_distance(S)) <= weld_tol
    V = np.concatenate(verts)
    fixed = np.concatenate(fixed)
    on_plane = np.concatenate(on_plane)

    # merge coincident vertices; reflection of a snapped vertex is exact up to rounding
    scale = float(np.ptp(V, axis=0).max()) or 1.0
    pairs = cKDTree(V).query_pairs(1e-9 * scale, output_type="ndarray")
    root = np.arange(len(V))

    def find(i):
        while root[i] != i:
            root[i] = root[root[i]]
            i = root[i]
        return i

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            root[max(ra, rb)] = min(ra, rb)
    rep = np.array([find(i) for i in range(len(V))])
    faces = [[int(rep[i]) for i in f] for f in faces]
    on_any = np.zeros(len(V), bool)
    np.logical_or.at(on_any, rep, on_plane)
    kept_fixed = np.zeros(len(V), bool)
    np.logical_or.at(kept_fixed, rep, fixed & ~on_plane)

    # fuse faces across on-plane edges
    Vm = V  # positions at representatives are the same up to rounding
    edge_faces: dict[tuple[int, int], list[int]] = {}
    for fi, f in enumerate(faces):
        for k in range(len(f)):
            a, b = f[k], f[(k + 1) % len(f)]
            edge_faces.setdefault((min(a, b), max(a, b)), []).append(fi)
    bad = [e for e, fs in edge_faces.items() if len(fs) > 2]
    if bad:
        locs = [Vm[list(e)].mean(axis=0).round(6).tolist() for e in bad[:5]]
        raise MeshError(f"welding produced {len(bad)} non-manifold edges, e.g. at {locs}")
    froot = list(range(len(faces)))

    def ffind(i):
        while froot[i] != i:
            froot[i] = froot[froot[i]]
            i = froot[i]
        return i

    for (a, b), fs in edge_faces.items():
        if len(fs) != 2 or not (on_any[a] and on_any[b]):
            continue
        split = any(
            abs(pl.signed_distance(Vm[a])) <= 1e-9 * scale
            and abs(pl.signed_distance(Vm[b])) <= 1e-9 * scale
            and straddle[fs[0], j] and straddle[fs[1], j]
            for j, pl in enumerate(planes)
        )
        if split:
            ra, rb = ffind(fs[0]), ffind(fs[1])
            if ra != rb:
                froot[max(ra, rb)] = min(ra, rb)
    groups: dict[int, list[int]] = {}
    for fi in range(len(faces)):
        groups.setdefault(ffind(fi), []).append(fi)
    fused = []
    for r in sorted(groups):
        members = groups[r]
        if len(members) == 1:
            fused.append(faces[r])
            continue
        hes = [(f[k], f[(k + 1) % len(f)]) for fi in members for f in [faces[fi]] for k in range(len(f))]
        hs = set(hes)
        outer = [(a, b) for a, b in hes if (b, a) not in hs]
        loop = _chain(outer)
        if loop is None:
            c = Vm[faces[r]].mean(axis=0).round(6).tolist()
            raise MeshError(f"faces fused across a symmetry plane do not form one polygon near {c}")
        fused.append(loop)

    # drop interior on-plane vertices that ended up with two edges
    degree: dict[int, set] = {}
    for f in fused:
        for k in range(len(f)):
            a, b = f[k], f[(k + 1) % len(f)]
            degree.setdefault(a, set()).add(b)
            degree.setdefault(b, set()).add(a)
    used_edges: dict[tuple[int, int], int] = {}
    for f in fused:
        for k in range(len(f)):
            e = (min(f[k], f[(k + 1) % len(f)]), max(f[k], f[(k + 1) % len(f)]))
            used_edges[e] = used_edges.get(e, 0) + 1
    boundary = set()
    for (a, b), c in used_edges.items():
        if c == 1:
            boundary.update((a, b))
    drop = {v for v, nb in degree.items() if len(nb) == 2 and on_any[v] and v not in boundary}
    fused = [[v for v in f if v not in drop] for f in fused]
    if any(len(f) < 3 for f in fused):
        raise MeshError("welding collapsed a face below three vertices")

    used = sorted({v for f in fused for v in f})
    remap = {v: i for i, v in enumerate(used)}
    out = PolyMesh(V[used], [[remap[v] for v in f] for f in fused])
    bnd = out.boundary_vertices
    out.fixed = bnd | kept_fixed[used]
    out.validate()
    return out
