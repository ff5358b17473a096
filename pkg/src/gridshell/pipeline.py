"""End-to-end grid-shell generation: stress analysis, field processing,
metric deformation, anisotropic CVT, regularization, welding and frame
evaluation."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import acvt, frame, regularizer as reg, shell_fem, stress_field as sf
from .deform import DeformedDomain, fold_overs, refine_until_fit
from .mesh import PolyMesh, TriMesh, classify_boundary, clip_by_plane, load_obj, save_obj

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LENGTH_TOL = 0.05


class PipelineError(RuntimeError):
    """A stage failed; the message starts with the stage name."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {type(exc).__name__}: {exc}")
        self.stage = stage


class _stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, et, exc, tb):
        if exc is not None and not isinstance(exc, PipelineError) and isinstance(exc, Exception):
            raise PipelineError(self.name, exc) from exc
        return False


@dataclass
class PipelineConfig:
    input_mesh: str = ""
    output_dir: str = ""
    D: float = 1.0
    A: float = 1.0
    R: float = 1.0
    rng_seed: int = 0
    symmetry_planes: list = field(default_factory=list)  # [{"point": [...], "normal": [...]}]
    symmetry_tolerance: float = 1e-3
    corner_angle_deg: float = 30.0
    # field processing
    smoothness_weight: float = 1.0
    lipschitz_density: float | None = None  # default: range / R
    lipschitz_anisotropy: float | None = None
    # shell analysis
    youngs_modulus: float = 210e9
    poisson_ratio: float = 0.3
    shell_thickness: float = 0.01
    shell_load_density: float = 1e3
    # remeshing
    max_refine_rounds: int = 20
    lloyd_max_iters: int = 100
    # regularizer
    damping: float = 0.5
    regularize_iters: int = 100
    regularize_tol: float = 1e-6
    weld_tol: float = 1e-6
    # frame
    section_diameter: float = 0.037
    steel_density: float = 7850.0
    frame_load_density: float = 1e3
    supports: str = "boundary"  # or "corners"
    # optional bisection on R toward a total edge length
    target_length: float | None = None
    bisection_iters: int = 12

    def __post_init__(self):
        if self.D < 1 or self.A < 1:
            raise ValueError(f"D and A must be >= 1 (got D={self.D}, A={self.A})")
        if self.R <= 0:
            raise ValueError("R must be positive")
        if self.supports not in ("boundary", "corners"):
            raise ValueError("supports must be 'boundary' or 'corners'")
        if self.target_length is not None and self.target_length <= 0:
            raise ValueError("target length must be positive")

    @property
    def planes(self) -> list[sf.SymmetryPlane]:
        return [sf.SymmetryPlane(tuple(p["point"]), tuple(p["normal"])) for p in self.symmetry_planes]

    def shell(self) -> shell_fem.ShellAnalysisConfig:
        return shell_fem.ShellAnalysisConfig(
            self.youngs_modulus, self.poisson_ratio, self.shell_thickness, self.shell_load_density
        )

    def regularizer(self) -> reg.RegularizerConfig:
        return reg.RegularizerConfig(self.damping, self.regularize_iters, self.regularize_tol)

    def material(self) -> frame.Material:
        return frame.Material(self.youngs_modulus, self.poisson_ratio, self.steel_density)

    @classmethod
    def from_json(cls, path: str | Path, **overrides) -> "PipelineConfig":
        data = json.loads(Path(path).read_text())
        data.pop("schema_version", None)
        data.update({k: v for k, v in overrides.items() if v is not None})
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**data)

    def to_json(self) -> dict:
        # output_dir is left out so bundles written to different places match
        doc = asdict(self)
        doc.pop("output_dir")
        if doc["input_mesh"] is not None:
            doc["input_mesh"] = str(doc["input_mesh"])
        return {"schema_version": SCHEMA_VERSION, **doc}


@dataclass
class PipelineResult:
    gridshell: PolyMesh
    psi: sf.PsiField
    domain: DeformedDomain
    vd: acvt.VoronoiState
    seeds: acvt.SeedSet
    model: frame.FrameModel
    report: frame.EvalReport
    R: float
    summary: dict


# --------------------------------------------------------------------------
# stages


def analyze(mesh: TriMesh, cfg: PipelineConfig) -> shell_fem.StressTensorField:
    with _stage("analyze"):
        return shell_fem.assemble_and_solve(mesh, cfg.shell())


def process_field(mesh: TriMesh, stress: shell_fem.StressTensorField, cfg: PipelineConfig, R: float | None = None) -> sf.PsiField:
    """Principal decomposition, smoothing, saturation, symmetrization and
    rescaling onto [1, D] x [1, A]."""
    R = cfg.R if R is None else R
    with _stage("field"):
        psi = shell_fem.principal_decompose(stress)
        psi = sf.smooth_line_field(psi, mesh, cfg.smoothness_weight)
        Ld = cfg.lipschitz_density or sf.default_lipschitz(psi.d, R)
        La = cfg.lipschitz_anisotropy or sf.default_lipschitz(psi.a, R)
        psi = psi.replace(d=sf.lipschitz_saturate(psi.d, mesh, Ld), a=sf.lipschitz_saturate(psi.a, mesh, La))
        if cfg.planes:
            psi = sf.symmetrize(psi, mesh, cfg.planes, cfg.symmetry_tolerance)
        return sf.rescale(psi, cfg.D, cfg.A)


def sector(mesh: TriMesh, psi: sf.PsiField, cfg: PipelineConfig) -> tuple[TriMesh, sf.PsiField]:
    """Part of the surface on the positive side of every symmetry plane."""
    origin = np.arange(mesh.n_triangles)
    for pl in cfg.planes:
        mesh, o = clip_by_plane(mesh, np.asarray(pl.point), np.asarray(pl.normal), tol=cfg.weld_tol)
        origin = origin[o]
    mesh = classify_boundary(mesh, math.radians(cfg.corner_angle_deg))
    return mesh, psi.take(origin).reproject(mesh)


class _DomainCache:
    """Refined domains keyed by q; a domain refined for a smaller q also
    satisfies every larger one."""

    def __init__(self, mesh: TriMesh, psi: sf.PsiField, cfg: PipelineConfig):
        self.mesh, self.psi, self.cfg = mesh, psi, cfg
        self.items: list[DeformedDomain] = []

    def get(self, q: float) -> DeformedDomain:
        fits = [d for d in self.items if d.q <= q]
        if fits:
            return max(fits, key=lambda d: d.q)
        dom = refine_until_fit(self.mesh, self.psi, q, max_rounds=self.cfg.max_refine_rounds)
        self.items.append(dom)
        return dom


def remesh(dom: DeformedDomain, R: float, cfg: PipelineConfig):
    with _stage("sample"):
        seeds = acvt.poisson_sample(dom, R, cfg.rng_seed)
    with _stage("lloyd"):
        seeds, vd = acvt.lloyd_relax(dom, seeds, cfg.lloyd_max_iters)
    with _stage("extract"):
        poly = acvt.extract_cvt(dom, vd)
    return seeds, vd, poly


def finish(poly: PolyMesh, cfg: PipelineConfig) -> PolyMesh:
    with _stage("regularize"):
        poly = reg.regularize(poly, cfg.regularizer())
    if cfg.planes:
        with _stage("weld"):
            poly = reg.symmetrize_tessellation(poly, cfg.planes, cfg.weld_tol)
            poly = reg.face_metrics(poly)
    return poly


def corner_vertices(mesh: PolyMesh, angle: float) -> np.ndarray:
    """Boundary vertices where the outline turns by more than ``angle``."""
    incident: dict[int, list[int]] = {}
    for a, b in mesh.boundary_edges:
        incident.setdefault(a, []).append(b)
        incident.setdefault(b, []).append(a)
    out = np.zeros(mesh.n_vertices, bool)
    V = mesh.vertices
    for v, nb in incident.items():
        if len(nb) != 2:
            out[v] = True
            continue
        d0 = V[v] - V[nb[0]]
        d1 = V[nb[1]] - V[v]
        c = d0 @ d1 / (np.linalg.norm(d0) * np.linalg.norm(d1))
        out[v] = math.acos(max(-1.0, min(1.0, c))) > angle
    return out


def build_model(poly: PolyMesh, cfg: PipelineConfig) -> frame.FrameModel:
    model = frame.build_frame(poly, cfg.section_diameter, cfg.material(), cfg.frame_load_density)
    if cfg.supports == "corners":
        corners = corner_vertices(poly, math.radians(cfg.corner_angle_deg))
        if not corners.any():
            raise frame.FrameError("no corner vertices found for corner supports")
        model.supports = corners
    return model


def evaluate_mesh(poly: PolyMesh, cfg: PipelineConfig) -> tuple[frame.FrameModel, frame.EvalReport]:
    with _stage("evaluate"):
        model = build_model(poly, cfg)
        return model, frame.evaluate(model)


def total_edge_length(poly: PolyMesh) -> float:
    E = poly.edges
    return float(np.linalg.norm(poly.vertices[E[:, 1]] - poly.vertices[E[:, 0]], axis=1).sum())


def _tessellate(cache: _DomainCache, R: float, cfg: PipelineConfig):
    with _stage("deform"):
        dom = cache.get(R / 5.0)
    seeds, vd, raw = remesh(dom, R, cfg)
    return dom, seeds, vd, raw, finish(raw, cfg)


def _bisect_R(cache: _DomainCache, cfg: PipelineConfig):
    """Adjust R until the welded tessellation's total edge length is within
    5% of the target. Length falls as R grows."""
    T = cfg.target_length
    tried: dict[float, tuple] = {}

    def run(R):
        if R not in tried:
            out = _tessellate(cache, R, cfg)
            tried[R] = out
            log.info("bisection: R = %.6g -> length %.6g (target %.6g)", R, total_edge_length(out[4]), T)
        return tried[R]

    def err(R):
        return (total_edge_length(run(R)[4]) - T) / T

    R = cfg.R
    e = err(R)
    if abs(e) <= LENGTH_TOL:
        return R, run(R)
    # bracket in log R
    lo = hi = R
    for _ in range(cfg.bisection_iters):
        if e > 0:
            lo, hi = hi, hi * 2.0
            e = err(hi)
            if e <= 0:
                break
        else:
            lo, hi = lo / 2.0, lo
            e = err(lo)
            if e >= 0:
                break
        if abs(e) <= LENGTH_TOL:
            R = hi if e <= 0 and hi != lo else lo
            return R, run(R)
    for _ in range(cfg.bisection_iters):
        mid = math.sqrt(lo * hi)
        e = err(mid)
        if abs(e) <= LENGTH_TOL:
            return mid, run(mid)
        if e > 0:
            lo = mid
        else:
            hi = mid
    best = min(tried, key=lambda r: abs(err(r)))
    log.warning("bisection on R did not reach 5%% of the target length; using R = %g", best)
    return best, tried[best]


def run_pipeline(cfg: PipelineConfig, mesh: TriMesh | None = None, write: bool = True) -> PipelineResult:
    """Run every stage; with ``write`` the artifacts land in cfg.output_dir."""
    if mesh is None:
        with _stage("load"):
            mesh = load_obj(cfg.input_mesh, math.radians(cfg.corner_angle_deg))
    stress = analyze(mesh, cfg)
    psi = process_field(mesh, stress, cfg)
    with _stage("sector"):
        sub, sub_psi = sector(mesh, psi, cfg) if cfg.planes else (mesh, psi)
    cache = _DomainCache(sub, sub_psi, cfg)
    if cfg.target_length is None:
        R = cfg.R
        dom, seeds, vd, raw, poly = _tessellate(cache, R, cfg)
    else:
        R, (dom, seeds, vd, raw, poly) = _bisect_R(cache, cfg)
    model, report = evaluate_mesh(poly, cfg)

    arity = np.bincount([len(f) for f in poly.faces], minlength=7)
    interior = [f for f in poly.faces if not poly.boundary_vertices[f].any()]
    summary = {
        "R": R,
        "q": dom.q,
        "refinement_rounds": dom.rounds,
        "fold_overs": int(fold_overs(dom.deformed).sum()),
        "seeds": {k: seeds.count(k) for k in (acvt.CORNER, acvt.BORDER, acvt.INTERIOR)},
        "lloyd_iterations": len(vd.history) - 1,
        "cvt_energy": vd.history[-1],
        "faces": len(poly.faces),
        "vertices": poly.n_vertices,
        "arity_histogram": {str(k): int(c) for k, c in enumerate(arity) if c},
        "interior_hexagon_fraction": float(np.mean([len(f) == 6 for f in interior])) if interior else None,
        "mean_planarity": float(np.nanmean(poly.planarity)),
        "mean_regularity": float(np.nanmean(poly.regularity)),
    }
    result = PipelineResult(poly, psi, dom, vd, seeds, model, report, R, summary)
    if write:
        with _stage("write"):
            write_bundle(result, stress, cfg)
    return result


def write_bundle(res: PipelineResult, stress, cfg: PipelineConfig) -> None:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_obj(res.gridshell, out / "gridshell.obj")
    sf.save_psi(res.psi, out / "field.json")
    save_obj(res.domain.deformed, out / "deformed.obj")
    reg.save_metrics_csv(res.gridshell, out / "metrics.csv")
    res.vd.save_labels(out / "labels.csv")
    frame.save_axial_forces(res.model, res.report, out / "axial_forces.csv")
    shell_fem.save_stress_field(stress, out / "stress.json")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "pipeline_report",
        "config": cfg.to_json(),
        "summary": res.summary,
        "frame": res.report.to_json(),
    }
    (out / "report.json").write_text(json.dumps(doc, indent=1))


# --------------------------------------------------------------------------
# parameter sweep


SWEEP_FIELDS = ["D", "A", "rep", "rng_seed", "status", "faces", "total_length", "delta_max", "lambda_lin", "R", "error"]


def derived_seed(base: int, i: int, j: int, rep: int) -> int:
    return int(np.random.SeedSequence([base, i, j, rep]).generate_state(1)[0])


def sweep(cfg: PipelineConfig, D_values, A_values, repetitions: int = 3, mesh: TriMesh | None = None) -> list[dict]:
    """Run the pipeline for every (D, A, repetition) and append one mean row
    per (D, A). Failed runs are recorded and the sweep goes on."""
    D_values, A_values = list(D_values), list(A_values)
    if not D_values or not A_values:
        raise ValueError("D and A value lists must be nonempty")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    if mesh is None:
        mesh = load_obj(cfg.input_mesh, math.radians(cfg.corner_angle_deg))
    rows, means = [], []
    for i, D in enumerate(D_values):
        for j, A in enumerate(A_values):
            block = []
            for rep in range(repetitions):
                seed = derived_seed(cfg.rng_seed, i, j, rep)
                run_cfg = PipelineConfig(**{**asdict(cfg), "D": D, "A": A, "rng_seed": seed})
                row = {"D": D, "A": A, "rep": rep, "rng_seed": seed}
                try:
                    res = run_pipeline(run_cfg, mesh, write=False)
                    row.update(
                        status="ok", faces=len(res.gridshell.faces), total_length=res.report.total_length,
                        delta_max=res.report.delta_max, lambda_lin=res.report.lambda_lin, R=res.R, error="",
                    )
                    block.append(row)
                except Exception as exc:  # recorded per row
                    log.warning("sweep run D=%g A=%g rep=%d failed: %s", D, A, rep, exc)
                    row.update(status="failed", error=str(exc))
                rows.append(row)
            mean = {"D": D, "A": A, "rep": "mean", "rng_seed": "", "status": f"{len(block)}/{repetitions} ok", "error": ""}
            for k in ("faces", "total_length", "delta_max", "lambda_lin", "R"):
                vals = [r[k] for r in block]
                mean[k] = float(np.mean(vals)) if vals else math.nan
            means.append(mean)
    return rows + means


def save_sweep_csv(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, restval="")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
