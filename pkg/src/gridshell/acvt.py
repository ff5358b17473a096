"""Seed sampling, discrete Lloyd relaxation and Voronoi extraction on the
deformed surface M', with the result mapped back onto M."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .deform import DeformedDomain
from .mesh import MeshError, PolyMesh, TriMesh, boundary_loops, dijkstra

log = logging.getLogger(__name__)

CORNER, BORDER, INTERIOR = "corner", "border", "interior"
EPS_DIST = 1e-12


class ExtractionError(MeshError):
    pass


@dataclass(frozen=True)
class SurfaceGraph:
    """Vertex graph of a surface with its ordered boundary loops; lets the
    relaxation run on meshes and on bare graphs (e.g. a path) alike."""

    positions: np.ndarray
    neighbors: list
    loops: tuple = ()
    corner: np.ndarray | None = None
    boundary: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.positions)
        if self.corner is None:
            object.__setattr__(self, "corner", np.zeros(n, bool))
        if self.boundary is None:
            b = np.zeros(n, bool)
            for loop in self.loops:
                b[list(loop)] = True
            object.__setattr__(self, "boundary", b | self.corner)

    @classmethod
    def from_domain(cls, domain: DeformedDomain) -> "SurfaceGraph":
        mp = domain.deformed
        return cls(
            mp.vertices,
            mp.vertex_neighbors,
            tuple(tuple(l) for l in boundary_loops(mp)),
            domain.mesh.corner.copy(),
            domain.mesh.boundary.copy(),
        )

    @property
    def n(self) -> int:
        return len(self.positions)


@dataclass(frozen=True, eq=False)
class SeedSet:
    seeds: np.ndarray  # vertex indices
    kinds: np.ndarray  # CORNER | BORDER | INTERIOR per seed
    rng_seed: int = 0

    def __post_init__(self):
        seeds = np.asarray(self.seeds, dtype=np.int64)
        kinds = np.asarray(self.kinds, dtype="<U8")
        if len(seeds) != len(kinds):
            raise ValueError("one kind per seed")
        if len(np.unique(seeds)) != len(seeds):
            raise ValueError("duplicate seed vertices")
        object.__setattr__(self, "seeds", seeds)
        object.__setattr__(self, "kinds", kinds)

    def __len__(self) -> int:
        return len(self.seeds)

    def count(self, kind: str) -> int:
        return int(np.sum(self.kinds == kind))

    def with_seeds(self, seeds) -> "SeedSet":
        return SeedSet(seeds, self.kinds, self.rng_seed)


@dataclass(eq=False)
class VoronoiState:
    """Discrete Voronoi diagram: every vertex carries the index (into the
    seed list) of its nearest seed and the graph distance to it."""

    labels: np.ndarray
    distance: np.ndarray
    adjacency: set = field(default_factory=set)
    regions: list = field(default_factory=list)
    history: list = field(default_factory=list)  # CVT energy per iteration

    @property
    def energy(self) -> float:
        return cvt_energy(self.distance)

    def save_labels(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["vertex", "label", "distance"])
            for v, (l, d) in enumerate(zip(self.labels.tolist(), self.distance.tolist())):
                w.writerow([v, l, repr(d)])


def cvt_energy(distance: np.ndarray) -> float:
    return float(np.sum(np.square(distance)))


def voronoi(graph: SurfaceGraph, seeds: np.ndarray) -> VoronoiState:
    """Multi-source propagation; ties go to the lower seed index."""
    seeds = np.asarray(seeds, dtype=np.int64)
    dist, lab = dijkstra(graph.neighbors, seeds.tolist(), range(len(seeds)))
    if np.any(lab < 0):
        raise MeshError(f"{int(np.sum(lab < 0))} vertices unreachable from every seed")
    adj = set()
    for v, nb in enumerate(graph.neighbors):
        lv = lab[v]
        for u, _ in nb:
            if lab[u] != lv:
                adj.add((min(lv, lab[u]), max(lv, lab[u])))
    order = np.argsort(lab, kind="stable")
    splits = np.searchsorted(lab[order], np.arange(1, len(seeds)))
    regions = np.split(order, splits)
    return VoronoiState(lab, dist, adj, regions)


# --------------------------------------------------------------------------
# sampling


def _loop_arclength(graph: SurfaceGraph, loop) -> np.ndarray:
    P = graph.positions[list(loop)]
    seg = np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])  # last entry is the perimeter


def _cyclic_gap(s: float, t: float, perimeter: float) -> float:
    d = abs(s - t) % perimeter
    return min(d, perimeter - d)


def poisson_sample(domain: DeformedDomain, R: float, rng_seed: int = 0) -> SeedSet:
    """Three-stage dart throwing over the vertices of M'.

    Corners go in first, then boundary vertices that keep a spacing of at
    least R along their boundary loop, then interior vertices whose graph
    distance to every seed is at least R. Candidates are visited in an
    order drawn from ``rng_seed``.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if R < 2 * domain.q:
        raise ValueError(f"R = {R:g} is below twice the refinement length q = {domain.q:g}")
    return sample_graph(SurfaceGraph.from_domain(domain), R, rng_seed)


def sample_graph(graph: SurfaceGraph, R: float, rng_seed: int = 0) -> SeedSet:
    rng = np.random.default_rng(rng_seed)
    seeds: list[int] = [int(v) for v in np.flatnonzero(graph.corner)]
    kinds: list[str] = [CORNER] * len(seeds)
    taken = np.zeros(graph.n, bool)
    taken[seeds] = True

    # border: 1D spacing along each loop
    pos_on_loop: dict[int, tuple[int, float]] = {}
    perimeters = []
    for li, loop in enumerate(graph.loops):
        s = _loop_arclength(graph, loop)
        perimeters.append(s[-1])
        for k, v in enumerate(loop):
            pos_on_loop[v] = (li, s[k])
    on_loop: list[list[float]] = [[] for _ in graph.loops]
    for v in seeds:
        if v in pos_on_loop:
            li, s = pos_on_loop[v]
            on_loop[li].append(s)
    cand = np.array(sorted(pos_on_loop), dtype=np.int64)
    for v in rng.permutation(cand).tolist():
        if taken[v]:
            continue
        li, s = pos_on_loop[v]
        if all(_cyclic_gap(s, t, perimeters[li]) >= R for t in on_loop[li]):
            seeds.append(v)
            kinds.append(BORDER)
            taken[v] = True
            on_loop[li].append(s)

    # interior: graph distance to all seeds at least R
    if seeds:
        dist, _ = dijkstra(graph.neighbors, seeds, limit=R)
    else:
        dist = np.full(graph.n, math.inf)
    interior = np.flatnonzero(~graph.boundary)
    for v in rng.permutation(interior).tolist():
        if dist[v] < R:
            continue
        seeds.append(v)
        kinds.append(INTERIOR)
        d_new, _ = dijkstra(graph.neighbors, [v], limit=R)
        np.minimum(dist, d_new, out=dist)
    log.info(
        "poisson sampling: %d corner, %d border, %d interior seeds",
        kinds.count(CORNER), kinds.count(BORDER), kinds.count(INTERIOR),
    )
    return SeedSet(seeds, kinds, rng_seed)


# --------------------------------------------------------------------------
# relaxation


def centroid_by_quadric(region, positions: np.ndarray, candidates=None) -> int:
    """Region vertex minimizing the sum of squared distances to all region
    vertices; ties go to the lowest vertex index. ``candidates`` restricts
    the vertices the minimum is taken over (default: the region itself)."""
    region = np.asarray(region, dtype=np.int64)
    if len(region) == 0:
        raise ValueError("empty region")
    cand = region if candidates is None else np.asarray(candidates, dtype=np.int64)
    if len(cand) == 0:
        raise ValueError("no candidate vertices")
    P = positions[region]
    # quadric Q(x) = n x.x - 2 b.x + c
    n, b, c = len(P), P.sum(axis=0), float(np.sum(P * P))
    X = positions[cand]
    q = n * np.sum(X * X, axis=1) - 2 * X @ b + c
    best = q.min()
    tie = q <= best + 1e-12 * max(c, 1e-300)
    return int(cand[tie].min())


def _restricted_energy(graph: SurfaceGraph, source: int, mask: np.ndarray) -> float:
    d, _ = dijkstra(graph.neighbors, [source], allowed=mask)
    d = d[mask]
    return math.inf if np.any(~np.isfinite(d)) else cvt_energy(d)


def _border_targets(graph: SurfaceGraph, seeds: np.ndarray, kinds: np.ndarray) -> dict[int, int]:
    """Midpoint of each border seed's 1D Voronoi region along its loop."""
    out: dict[int, int] = {}
    seed_of = {int(v): i for i, v in enumerate(seeds)}
    for loop in graph.loops:
        s = _loop_arclength(graph, loop)
        P = s[-1]
        idx = [k for k, v in enumerate(loop) if v in seed_of]
        if len(idx) < 2:
            continue
        for j, k in enumerate(idx):
            i = seed_of[loop[k]]
            if kinds[i] != BORDER:
                continue
            kp, kn = idx[j - 1], idx[(j + 1) % len(idx)]
            back = (s[k] - s[kp]) % P or P  # arc to the previous seed
            ahead = (s[kn] - s[k]) % P or P
            target = (s[k] + 0.5 * (0.5 * ahead - 0.5 * back)) % P
            gaps = np.array([_cyclic_gap(target, t, P) for t in s[:-1]])
            near = np.flatnonzero(gaps <= gaps.min() + 1e-12 * P)
            out[i] = int(min(loop[m] for m in near))
    return out


def lloyd_relax(domain: DeformedDomain, seeds: SeedSet, max_iters: int = 100, tol: float = 0.0):
    """Discrete Lloyd relaxation on M'; see :func:`relax_graph`."""
    return relax_graph(SurfaceGraph.from_domain(domain), seeds, max_iters, tol)


def _lloyd_step(graph: SurfaceGraph, S: np.ndarray, kinds: np.ndarray, vd: VoronoiState, guarded: bool):
    """One relaxation sweep. With ``guarded`` a seed only moves if that
    lowers the energy of its own region measured inside the region, which
    cannot raise the total energy."""
    P = graph.positions
    S = S.copy()
    blocked: list[tuple[int, int]] = []

    def accept(i, v, mask):
        if not guarded:
            return True
        return _restricted_energy(graph, v, mask) < cvt_energy(vd.distance[mask]) * (1 - 1e-12)

    # (i) boundary: midpoint of the 1D region, corners stay
    before = S.copy()
    for i, v in sorted(_border_targets(graph, S, kinds).items()):
        mask = vd.labels == i
        if v == S[i] or v in set(S.tolist()) or not mask[v]:
            continue
        if accept(i, v, mask):
            S[i] = v
        else:
            blocked.append((i, v))
    # (ii) Voronoi update
    if np.any(S != before):
        vd = voronoi(graph, S)
    # (iii) interior seeds to the quadric minimizer of their region
    for i in np.flatnonzero(kinds == INTERIOR):
        region = vd.regions[i]
        inner = region[~graph.boundary[region]]
        if len(inner) == 0:
            continue
        v = centroid_by_quadric(region, P, inner)
        if v == S[i]:
            continue
        if accept(i, v, vd.labels == i):
            S[i] = v
        else:
            blocked.append((i, v))
    return S, voronoi(graph, S), blocked


def relax_graph(graph: SurfaceGraph, seeds: SeedSet, max_iters: int = 100, tol: float = 0.0):
    """Lloyd iterations: border seeds to the midpoint of their 1D region,
    Voronoi update, interior seeds to the quadric-minimizing interior vertex
    of their region. Corners never move.

    The plain step is taken whenever it lowers the CVT energy; otherwise
    the sweep is redone with every move screened against its own region's
    energy, and moves that fail that screen are retried one at a time
    against the energy of the full diagram. The energy never increases. Stops once no seed moved by more than ``tol`` or after
    ``max_iters``. Returns the relaxed seeds and the final diagram.
    """
    S = seeds.seeds.copy()
    kinds = seeds.kinds.copy()
    P = graph.positions
    vd = voronoi(graph, S)
    history = [vd.energy]
    blocked = 0
    for it in range(max_iters):
        S_new, vd_new, _ = _lloyd_step(graph, S, kinds, vd, guarded=False)
        if np.any(S_new != S) and not vd_new.energy < vd.energy:
            S_new, vd_new, held = _lloyd_step(graph, S, kinds, vd, guarded=True)
            # second chance for held-back moves, judged on the full diagram
            for i, v in held:
                if v in set(S_new.tolist()):
                    blocked += 1
                    continue
                trial = S_new.copy()
                trial[i] = v
                vd_trial = voronoi(graph, trial)
                if vd_trial.energy <= vd_new.energy:
                    S_new, vd_new = trial, vd_trial
                else:
                    blocked += 1
        old = S
        S, vd = S_new, vd_new
        # seeds whose region vanished
        empty = [i for i in range(len(S)) if len(vd.regions[i]) == 0 or vd.labels[S[i]] != i]
        if empty:
            log.warning("deleting %d seeds with empty regions: %s", len(empty), empty)
            keep = np.setdiff1d(np.arange(len(S)), empty)
            S, kinds, old = S[keep], kinds[keep], old[keep]
            vd = voronoi(graph, S)
        history.append(vd.energy)
        moved = float(np.max(np.linalg.norm(P[S] - P[old], axis=1), initial=0.0))
        log.debug("lloyd %d: energy %.6e, max move %.3e", it, history[-1], moved)
        if moved <= tol:
            break
    if blocked:
        log.info("lloyd: %d moves were held back to keep the energy from rising", blocked)
    vd.history = history
    return SeedSet(S, kinds, seeds.rng_seed), vd


# --------------------------------------------------------------------------
# extraction


def _tri_weights(dist: np.ndarray) -> np.ndarray:
    w = 1.0 / np.maximum(dist, EPS_DIST)
    return w / w.sum()


def extract_cvt(domain: DeformedDomain, vd: VoronoiState) -> PolyMesh:
    """Polygon per region, traced along the region boundary with the
    region on the left, and mapped back onto M.

    Voronoi vertices sit in triangles of M' whose corners carry three
    labels; where a region boundary meets the mesh boundary a vertex is put
    on the boundary edge and the walk follows the boundary, keeping corner
    vertices, until the region ends.
    """
    mp: TriMesh = domain.deformed
    T = mp.triangles
    lab = vd.labels
    dist = vd.distance
    nseeds = int(lab.max()) + 1
    if nseeds < 3:
        raise ExtractionError("extraction needs at least three regions")
    corner = domain.mesh.corner
    Vm = domain.mesh.vertices

    # directed edge -> triangle with that edge in its own orientation
    owner: dict[tuple[int, int], int] = {}
    for t, (a, b, c) in enumerate(T.tolist()):
        owner[(a, b)] = t
        owner[(b, c)] = t
        owner[(c, a)] = t
    nxt_on_boundary: dict[int, int] = {}
    for (a, b), t in owner.items():
        if (b, a) not in owner:
            nxt_on_boundary[a] = b

    points: dict[tuple, int] = {}
    coords: list[np.ndarray] = []

    def point(key, pos):
        if key not in points:
            points[key] = len(coords)
            coords.append(pos)
        return points[key]

    def voronoi_vertex(t):
        w = _tri_weights(dist[T[t]])
        return point(("t", t), w @ Vm[T[t]])

    def edge_point(a, b):
        w = _tri_weights(dist[[a, b]])
        return point(("e", min(a, b), max(a, b)), w[0] * Vm[a] + w[1] * Vm[b])

    # out-edges: directed (a -> b) with a in the region and b not, in the
    # orientation of the triangle that owns them
    out_edges: dict[int, list[tuple[int, int]]] = {i: [] for i in range(nseeds)}
    for (a, b) in owner:
        if lab[a] != lab[b]:
            out_edges[int(lab[a])].append((a, b))

    faces: list[list[int]] = []
    face_seed: list[int] = []
    for i in range(nseeds):
        todo = set(out_edges[i])
        if not todo:
            continue
        loops = []
        while todo:
            start = min(todo)
            cycle: list[int] = []
            e = start
            for _ in range(4 * len(T) + 10):
                todo.discard(e)
                t = owner[e]
                tri = T[t].tolist()
                labs = {int(lab[v]) for v in tri}
                if len(labs) == 3:
                    cycle.append(voronoi_vertex(t))
                # the in-edge of this triangle (non-i -> i)
                k = next(k for k in range(3) if lab[tri[k]] != i and lab[tri[(k + 1) % 3]] == i)
                x, y = tri[k], tri[(k + 1) % 3]
                if (y, x) in owner:
                    e = (y, x)
                else:
                    # the region boundary runs into the mesh boundary: follow it
                    cycle.append(edge_point(x, y))
                    z = y
                    steps = 0
                    while lab[nxt_on_boundary[z]] == i:
                        if corner[z]:
                            cycle.append(point(("v", z), Vm[z]))
                        z = nxt_on_boundary[z]
                        steps += 1
                        if steps > len(lab):
                            raise ExtractionError(f"region {i}: boundary walk does not terminate")
                    if corner[z]:
                        cycle.append(point(("v", z), Vm[z]))
                    w_ = nxt_on_boundary[z]
                    cycle.append(edge_point(z, w_))
                    e = (z, w_)
                if e == start:
                    break
            else:
                raise ExtractionError(f"region {i}: boundary walk does not close")
            loops.append(cycle)
        if len(loops) > 1:
            raise ExtractionError(f"region {i} (seed index {i}) has {len(loops)} boundary cycles")
        cycle = loops[0]
        if len(cycle) < 3 or len(set(cycle)) != len(cycle):
            log.warning("dropping degenerate polygon of region %d (%d vertices)", i, len(cycle))
            continue
        faces.append(cycle)
        face_seed.append(i)

    # drop unused points and renumber
    used = sorted({v for f in faces for v in f})
    remap = {v: k for k, v in enumerate(used)}
    verts = np.array([coords[v] for v in used]).reshape(-1, 3)
    faces = [[remap[v] for v in f] for f in faces]
    on_boundary = np.zeros(len(used), bool)
    for key, v in points.items():
        if v in remap and key[0] in ("e", "v"):
            on_boundary[remap[v]] = True
    seed_vertex = np.full(len(vd.regions), -1, dtype=np.int64)
    for i, region in enumerate(vd.regions):
        if len(region):
            seed_vertex[i] = region[np.argmin(vd.distance[region])]
    fs = np.array(face_seed, dtype=np.int64)
    return PolyMesh(
        verts, faces, fixed=on_boundary, face_seeds=fs,
        seed_points=domain.mesh.vertices[seed_vertex[fs]].reshape(-1, 3),
    )
