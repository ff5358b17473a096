"""Triangle and polygon mesh kernel: storage, adjacency, boundaries, graph
geodesics, edge splitting and Wavefront OBJ I/O."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

DEFAULT_CORNER_ANGLE = math.radians(30.0)


class MeshError(ValueError):
    """Raised for malformed meshes or unreadable mesh files."""


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh with per-vertex boundary and corner tags.

    Use :meth:`from_arrays` to build a validated mesh; the bare constructor
    trusts its input.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    corner: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        vertices: Sequence,
        triangles: Sequence,
        corner_angle: float = DEFAULT_CORNER_ANGLE,
    ) -> "TriMesh":
        V = np.array(vertices, dtype=float).reshape(-1, 3)
        T = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        n = len(V)
        for t, (a, b, c) in enumerate(T):
            if min(a, b, c) < 0 or max(a, b, c) >= n:
                raise MeshError(f"triangle {t} references a vertex out of range")
            if a == b or b == c or a == c:
                raise MeshError(f"triangle {t} has repeated vertices")
        mesh = cls(V, T, np.zeros(n, bool), np.zeros(n, bool))
        counts = mesh.edge_triangle_count
        bad = np.flatnonzero(counts > 2)
        if len(bad):
            a, b = mesh.edges[bad[0]]
            raise MeshError(f"non-manifold edge ({a}, {b}) shared by {counts[bad[0]]} triangles")
        areas = mesh.triangle_areas
        scale = max(float(np.ptp(V, axis=0).max()) if n else 0.0, 1e-300)
        degenerate = np.flatnonzero(areas <= 1e-14 * scale * scale)
        if len(degenerate):
            raise MeshError(f"degenerate triangle {degenerate[0]} (zero area)")
        return classify_boundary(mesh, corner_angle)

    def with_flags(self, boundary: np.ndarray, corner: np.ndarray) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles, np.asarray(boundary, bool), np.asarray(corner, bool))

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(np.asarray(vertices, float), self.triangles, self.boundary, self.corner)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def _edge_data(self):
        T = self.triangles
        half = np.stack([T, np.roll(T, -1, axis=1)], axis=2).reshape(-1, 2)
        key = np.sort(half, axis=1)
        edges, inverse = np.unique(key, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        tri_edges = inverse.reshape(-1, 3)
        counts = np.bincount(inverse, minlength=len(edges)).astype(np.int64)
        # the first two triangles (by index) around each edge
        tri_of = np.arange(len(inverse)) // 3
        order = np.lexsort((tri_of, inverse))
        first = np.searchsorted(inverse[order], np.arange(len(edges)))
        edge_tris = np.full((len(edges), 2), -1, dtype=np.int64)
        edge_tris[:, 0] = tri_of[order[first]]
        two = counts >= 2
        edge_tris[two, 1] = tri_of[order[first[two] + 1]]
        return edges.reshape(-1, 2), tri_edges, edge_tris, counts

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted vertex pairs."""
        return self._edge_data[0]

    @property
    def triangle_edges(self) -> np.ndarray:
        """Edge index of local edge k = (tri[k], tri[k+1]) for each triangle."""
        return self._edge_data[1]

    @property
    def edge_triangles(self) -> np.ndarray:
        """Incident triangles per edge, padded with -1."""
        return self._edge_data[2]

    @property
    def edge_triangle_count(self) -> np.ndarray:
        return self._edge_data[3]

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}

    @property
    def boundary_edge_mask(self) -> np.ndarray:
        return self.edge_triangle_count == 1

    @property
    def edge_lengths(self) -> np.ndarray:
        V = self.vertices
        return np.linalg.norm(V[self.edges[:, 1]] - V[self.edges[:, 0]], axis=1)

    @property
    def triangle_normals_raw(self) -> np.ndarray:
        V, T = self.vertices, self.triangles
        return np.cross(V[T[:, 1]] - V[T[:, 0]], V[T[:, 2]] - V[T[:, 0]])

    @property
    def triangle_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.triangle_normals_raw, axis=1)

    @property
    def triangle_normals(self) -> np.ndarray:
        n = self.triangle_normals_raw
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @property
    def barycenters(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @property
    def vertex_areas(self) -> np.ndarray:
        """One third of the incident triangle areas per vertex."""
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.reshape(-1), np.repeat(self.triangle_areas / 3.0, 3))
        return w

    @cached_property
    def tangent_frames(self) -> np.ndarray:
        """Per-triangle orthonormal tangent basis, shape (m, 2, 3).

        The first axis follows the edge tri[0] -> tri[1], the second is
        normal x first, so the frame moves rigidly with the mesh.
        """
        V, T = self.vertices, self.triangles
        e1 = V[T[:, 1]] - V[T[:, 0]]
        e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
        e2 = np.cross(self.triangle_normals, e1)
        e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
        return np.stack([e1, e2], axis=1)

    @cached_property
    def vertex_neighbors(self) -> list[list[tuple[int, float]]]:
        """Adjacency list with Euclidean edge weights."""
        nbrs: list[list[tuple[int, float]]] = [[] for _ in range(self.n_vertices)]
        for (a, b), w in zip(self.edges.tolist(), self.edge_lengths.tolist()):
            nbrs[a].append((b, w))
            nbrs[b].append((a, w))
        return nbrs

    @cached_property
    def triangle_neighbors(self) -> list[list[int]]:
        """Edge-adjacent triangles for each triangle."""
        out: list[list[int]] = [[] for _ in range(self.n_triangles)]
        for t0, t1 in self.edge_triangles.tolist():
            if t0 >= 0 and t1 >= 0:
                out[t0].append(t1)
                out[t1].append(t0)
        return out


@dataclass(eq=False)
class PolyMesh:
    """Polygonal mesh with arbitrary face arity and per-face metric slots."""

    vertices: np.ndarray
    faces: list[list[int]]
    planarity: np.ndarray | None = None
    regularity: np.ndarray | None = None
    fixed: np.ndarray | None = None
    face_seeds: np.ndarray | None = None  # seed index per face
    seed_points: np.ndarray | None = None  # (faces, 3) seed position per face

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, float).reshape(-1, 3)
        self.faces = [[int(i) for i in f] for f in self.faces]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def edge_faces(self) -> dict[tuple[int, int], list[int]]:
        out: dict[tuple[int, int], list[int]] = {}
        for fi, f in enumerate(self.faces):
            for k in range(len(f)):
                a, b = f[k], f[(k + 1) % len(f)]
                out.setdefault((min(a, b), max(a, b)), []).append(fi)
        return out

    @property
    def edges(self) -> np.ndarray:
        ef = self.edge_faces()
        return np.array(sorted(ef), dtype=np.int64).reshape(-1, 2)

    @property
    def boundary_edges(self) -> list[tuple[int, int]]:
        return sorted(e for e, fs in self.edge_faces().items() if len(fs) == 1)

    @property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, bool)
        for a, b in self.boundary_edges:
            mask[a] = mask[b] = True
        return mask

    def vertex_valence(self) -> np.ndarray:
        """Number of incident faces per vertex."""
        val = np.zeros(self.n_vertices, dtype=np.int64)
        for f in self.faces:
            val[f] += 1
        return val

    def validate(self) -> None:
        for fi, f in enumerate(self.faces):
            if len(f) < 3:
                raise MeshError(f"face {fi} has fewer than 3 vertices")
            if len(set(f)) != len(f):
                raise MeshError(f"face {fi} repeats a vertex")
        bad = [e for e, fs in self.edge_faces().items() if len(fs) > 2]
        if bad:
            raise MeshError(f"non-manifold polygon edges: {bad[:5]}")


# --------------------------------------------------------------------------
# OBJ I/O


def _parse_index(token: str, n: int, lineno: int) -> int:
    head = token.split("/")[0]
    try:
        i = int(head)
    except ValueError as exc:
        raise MeshError(f"line {lineno}: bad face index {token!r}") from exc
    return i - 1 if i > 0 else n + i


def load_obj(path: str | Path, corner_angle: float = DEFAULT_CORNER_ANGLE) -> TriMesh:
    """Read a triangle-only OBJ file; polygonal faces are rejected."""
    verts: list[list[float]] = []
    tris: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError as exc:
                    raise MeshError(f"line {lineno}: bad vertex") from exc
                if len(verts[-1]) != 3:
                    raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
            elif parts[0] == "f":
                idx = [_parse_index(tok, len(verts), lineno) for tok in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(f"line {lineno}: non-triangular face ({len(idx)} vertices)")
                tris.append(idx)
    return TriMesh.from_arrays(verts, tris, corner_angle)


def save_obj(mesh: TriMesh | PolyMesh, path: str | Path) -> None:
    """Write vertices (9 significant digits) and faces of any arity."""
    faces = mesh.triangles.tolist() if isinstance(mesh, TriMesh) else mesh.faces
    lines = ["v %.9g %.9g %.9g" % tuple(p) for p in np.asarray(mesh.vertices, float)]
    lines += ["f " + " ".join(str(i + 1) for i in f) for f in faces]
    Path(path).write_text("\n".join(lines) + "\n")


def load_poly_obj(path: str | Path) -> PolyMesh:
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([_parse_index(tok, len(verts), lineno) for tok in parts[1:]])
    return PolyMesh(np.array(verts, float).reshape(-1, 3), faces)


# --------------------------------------------------------------------------
# boundary


def boundary_loops(mesh: TriMesh) -> list[list[int]]:
    """Boundary cycles oriented with the surface on their left."""
    nxt: dict[int, int] = {}
    T = mesh.triangles
    for e in np.flatnonzero(mesh.boundary_edge_mask):
        t = mesh.edge_triangles[e, 0]
        k = int(np.flatnonzero(mesh.triangle_edges[t] == e)[0])
        a, b = int(T[t, k]), int(T[t, (k + 1) % 3])
        # pinched vertices keep their smallest successor
        if a not in nxt or b < nxt[a]:
            nxt[a] = b
    loops: list[list[int]] = []
    seen: set[int] = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = []
        v = start
        while v not in seen and v in nxt:
            seen.add(v)
            loop.append(v)
            v = nxt[v]
        loops.append(loop)
    return loops


def classify_boundary(mesh: TriMesh, corner_angle: float = DEFAULT_CORNER_ANGLE) -> TriMesh:
    """Flag boundary vertices, and corners where the boundary turns by more
    than ``corner_angle`` radians."""
    n = mesh.n_vertices
    boundary = np.zeros(n, bool)
    bedges = mesh.edges[mesh.boundary_edge_mask]
    boundary[bedges.reshape(-1)] = True
    incident: dict[int, list[int]] = {}
    for a, b in bedges.tolist():
        incident.setdefault(a, []).append(b)
        incident.setdefault(b, []).append(a)
    corner = np.zeros(n, bool)
    V = mesh.vertices
    for v, nb in incident.items():
        if len(nb) != 2:
            corner[v] = True
            continue
        d_in = V[v] - V[nb[0]]
        d_out = V[nb[1]] - V[v]
        c = np.dot(d_in, d_out) / (np.linalg.norm(d_in) * np.linalg.norm(d_out))
        corner[v] = math.acos(max(-1.0, min(1.0, c))) > corner_angle
    return mesh.with_flags(boundary, corner)


# --------------------------------------------------------------------------
# geodesics


@dataclass(frozen=True, eq=False)
class GeodesicField:
    sources: np.ndarray
    distance: np.ndarray
    nearest: np.ndarray  # source vertex index, -1 where unreachable

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.distance)


def dijkstra(
    neighbors: list[list[tuple[int, float]]],
    sources: Iterable[int],
    labels: Iterable[int] | None = None,
    limit: float = math.inf,
    allowed: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Multi-source Dijkstra on an adjacency list.

    Equal distances resolve to the lower label. ``allowed`` restricts the
    search to a vertex subset; ``limit`` stops expansion at that distance.
    """
    n = len(neighbors)
    sources = list(sources)
    labels = list(sources if labels is None else labels)
    dist = [math.inf] * n
    lab = [-1] * n
    heap: list[tuple[float, int, int]] = []
    for s, l in zip(sources, labels):
        if (0.0, l) < (dist[s], lab[s] if lab[s] >= 0 else math.inf):
            dist[s] = 0.0
            lab[s] = l
            heapq.heappush(heap, (0.0, l, s))
    done = [False] * n
    allow = None if allowed is None else allowed.tolist()
    while heap:
        d, l, v = heapq.heappop(heap)
        if done[v] or d != dist[v] or l != lab[v]:
            continue
        done[v] = True
        for u, w in neighbors[v]:
            if allow is not None and not allow[u]:
                continue
            nd = d + w
            if nd >= limit:
                continue
            du = dist[u]
            if nd < du or (nd == du and l < lab[u]):
                dist[u] = nd
                lab[u] = l
                heapq.heappush(heap, (nd, l, u))
    return np.array(dist), np.array(lab, dtype=np.int64)


def geodesic_distances(mesh: TriMesh, sources: Iterable[int]) -> GeodesicField:
    """Multi-source shortest-path distance over the edge graph."""
    src = sorted({int(s) for s in sources})
    if not src:
        raise MeshError("geodesic_distances needs at least one source")
    if src[0] < 0 or src[-1] >= mesh.n_vertices:
        raise MeshError("source index out of range")
    dist, lab = dijkstra(mesh.vertex_neighbors, src)
    return GeodesicField(np.array(src), dist, lab)


# --------------------------------------------------------------------------
# refinement


@dataclass(frozen=True)
class SplitMap:
    """Genealogy of a split pass.

    ``vertex_parents`` maps each inserted vertex to its parent edge and the
    split parameter; ``triangle_parent`` gives, for every output triangle,
    the input triangle it was cut from.
    """

    vertex_parents: dict[int, tuple[int, int, float]] = field(default_factory=dict)
    triangle_parent: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def split_long_edges(mesh: TriMesh, marked_edges: Iterable[tuple[int, int]]) -> tuple[TriMesh, SplitMap]:
    """Midpoint-split every marked edge together with its incident triangles.

    Edges are processed sequentially in sorted order, so a triangle with
    several marked edges is split repeatedly.
    """
    new_mesh, smap, _ = split_with_companions(mesh, marked_edges)
    return new_mesh, smap


def split_with_companions(
    mesh: TriMesh,
    marked_edges: Iterable[tuple[int, int]],
    companions: Sequence[np.ndarray] = (),
) -> tuple[TriMesh, SplitMap, list[np.ndarray]]:
    """:func:`split_long_edges` that also inserts midpoints into extra
    per-vertex arrays (e.g. a deformed copy of the positions)."""
    marked = sorted({(min(int(a), int(b)), max(int(a), int(b))) for a, b in marked_edges})
    for e in marked:
        if e not in mesh.edge_index:
            raise MeshError(f"marked edge {e} is not in the mesh")
    if not marked:
        return mesh, SplitMap({}, np.arange(mesh.n_triangles)), [np.array(c) for c in companions]

    verts = mesh.vertices.tolist()
    comps = [np.asarray(c, float).tolist() for c in companions]
    boundary = mesh.boundary.tolist()
    corner = mesh.corner.tolist()
    tris = mesh.triangles.tolist()
    parent = list(range(len(tris)))
    edge_tris: dict[tuple[int, int], list[int]] = {}
    for t, tri in enumerate(tris):
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            edge_tris.setdefault((min(a, b), max(a, b)), []).append(t)

    vparents: dict[int, tuple[int, int, float]] = {}
    for a, b in marked:
        m = len(verts)
        verts.append([(x + y) / 2 for x, y in zip(verts[a], verts[b])])
        for c in comps:
            c.append([(x + y) / 2 for x, y in zip(c[a], c[b])])
        on_boundary = len(edge_tris[(a, b)]) == 1
        boundary.append(on_boundary)
        corner.append(False)
        vparents[m] = (a, b, 0.5)
        for t in list(edge_tris.pop((a, b))):
            tri = tris[t]
            k = next(k for k in range(3) if {tri[k], tri[(k + 1) % 3]} == {a, b})
            p, q, r = tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]
            t2 = len(tris)
            tris[t] = [p, m, r]
            tris.append([m, q, r])
            parent.append(parent[t])
            # edge bookkeeping
            qr = (min(q, r), max(q, r))
            edge_tris[qr] = [t2 if x == t else x for x in edge_tris[qr]]
            edge_tris.setdefault((min(p, m), max(p, m)), []).append(t)
            edge_tris.setdefault((min(m, q), max(m, q)), []).append(t2)
            edge_tris.setdefault((min(m, r), max(m, r)), []).extend([t, t2])

    out = TriMesh(np.array(verts), np.array(tris, dtype=np.int64), np.array(boundary), np.array(corner))
    return out, SplitMap(vparents, np.array(parent, dtype=np.int64)), [np.array(c) for c in comps]


# --------------------------------------------------------------------------
# plane clipping


def clip_by_plane(
    mesh: TriMesh, point: np.ndarray, normal: np.ndarray, tol: float = 1e-9
) -> tuple[TriMesh, np.ndarray]:
    """Keep the part of the surface on the positive side of a plane.

    Triangles crossing the plane are cut; vertices within ``tol`` of it are
    snapped onto it. Returns the clipped mesh and, per output triangle, the
    index of the input triangle it came from.
    """
    normal = np.asarray(normal, float) / np.linalg.norm(normal)
    V = mesh.vertices.copy()
    s = (V - point) @ normal
    near = np.abs(s) <= tol
    V[near] -= np.outer(s[near], normal)
    s[near] = 0.0
    verts = V.tolist()
    cut: dict[tuple[int, int], int] = {}

    def crossing(a: int, b: int) -> int:
        key = (min(a, b), max(a, b))
        if key not in cut:
            i, j = key
            t = s[i] / (s[i] - s[j])
            p = V[i] + t * (V[j] - V[i])
            p -= ((p - point) @ normal) * normal
            cut[key] = len(verts)
            verts.append(p.tolist())
        return cut[key]

    out_tris: list[list[int]] = []
    origin: list[int] = []
    for t, tri in enumerate(mesh.triangles.tolist()):
        sv = [s[v] for v in tri]
        if min(sv) >= 0:
            if max(sv) > 0:
                out_tris.append(tri)
                origin.append(t)
            continue
        if max(sv) <= 0:
            continue
        poly: list[int] = []
        for k in range(3):
            a, b = tri[k], tri[(k + 1) % 3]
            if s[a] >= 0:
                poly.append(a)
            if (s[a] > 0 and s[b] < 0) or (s[a] < 0 and s[b] > 0):
                poly.append(crossing(a, b))
        for k in range(1, len(poly) - 1):
            out_tris.append([poly[0], poly[k], poly[k + 1]])
            origin.append(t)

    used = np.unique(np.array(out_tris, dtype=np.int64).reshape(-1))
    remap = -np.ones(len(verts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    tris = remap[np.array(out_tris, dtype=np.int64)]
    keep_verts = np.array(verts)[used]
    # discard slivers produced by near-plane cuts
    a = 0.5 * np.linalg.norm(
        np.cross(keep_verts[tris[:, 1]] - keep_verts[tris[:, 0]], keep_verts[tris[:, 2]] - keep_verts[tris[:, 0]]),
        axis=1,
    )
    ok = a > 1e-12 * max(a.max(), 1e-300)
    tris, origin_arr = tris[ok], np.array(origin)[ok]
    used2 = np.unique(tris.reshape(-1))
    remap2 = -np.ones(len(keep_verts), dtype=np.int64)
    remap2[used2] = np.arange(len(used2))
    clipped = TriMesh.from_arrays(keep_verts[used2], remap2[tris])
    return clipped, origin_arr
