"""Command-line entry point: one subcommand per stage plus the full
pipeline and the parameter sweep.

Every subcommand accepts ``--config file.json`` and one flag per config
field (kebab-case); flags override the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import typing
from dataclasses import MISSING, fields
from pathlib import Path

import numpy as np

from . import frame, regularizer as reg, shell_fem, stress_field as sf
from .deform import refine_until_fit
from .mesh import load_obj, load_poly_obj, save_obj
from .pipeline import (
    SCHEMA_VERSION,
    PipelineConfig,
    PipelineError,
    _stage,
    analyze,
    build_model,
    finish,
    process_field,
    remesh,
    run_pipeline,
    save_sweep_csv,
    sector,
    sweep,
)

log = logging.getLogger("gridshell")

_SKIP = {"input_mesh", "output_dir"}


def _parse_value(kind):
    def parse(text):
        if kind is list:
            return json.loads(text)
        if kind is bool:
            return text.lower() in ("1", "true", "yes")
        return kind(text)

    return parse


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON config file")
    hints = typing.get_type_hints(PipelineConfig)
    for f in fields(PipelineConfig):
        if f.name in _SKIP:
            continue
        hint = hints[f.name]
        args = typing.get_args(hint)
        kind = next((a for a in args if a is not type(None)), hint) if args else hint
        kind = typing.get_origin(kind) or kind
        p.add_argument(
            "--" + f.name.replace("_", "-"), dest=f.name, type=_parse_value(kind), default=None,
            help=f"(default: {f.default if f.default is not MISSING else '[]'})",
        )


def _config(ns: argparse.Namespace, **extra) -> PipelineConfig:
    over = {f.name: getattr(ns, f.name) for f in fields(PipelineConfig) if f.name not in _SKIP}
    over.update(extra)
    if ns.config is not None:
        return PipelineConfig.from_json(ns.config, **over)
    return PipelineConfig(**{k: v for k, v in over.items() if v is not None})


def _write_seeds(poly, path: Path) -> None:
    doc = {"schema_version": SCHEMA_VERSION, "kind": "face_seeds", "seed_points": poly.seed_points.tolist()}
    path.write_text(json.dumps(doc, indent=1))


def _read_seeds(path: Path) -> np.ndarray:
    return np.array(json.loads(path.read_text())["seed_points"], float).reshape(-1, 3)


# --------------------------------------------------------------------------
# subcommands


def cmd_analyze(ns) -> None:
    cfg = _config(ns)
    mesh = load_obj(ns.mesh, math.radians(cfg.corner_angle_deg))
    shell_fem.save_stress_field(analyze(mesh, cfg), ns.out)


def cmd_field(ns) -> None:
    cfg = _config(ns)
    mesh = load_obj(ns.mesh, math.radians(cfg.corner_angle_deg))
    stress = shell_fem.load_stress_field(ns.stress, mesh)
    sf.save_psi(process_field(mesh, stress, cfg), ns.out)


def cmd_remesh(ns) -> None:
    cfg = _config(ns)
    mesh = load_obj(ns.mesh, math.radians(cfg.corner_angle_deg))
    psi = sf.load_psi(ns.field)
    if len(psi) != mesh.n_triangles:
        raise ValueError(f"field has {len(psi)} triangles, mesh has {mesh.n_triangles}")
    psi = psi.reproject(mesh)
    with _stage("sector"):
        sub, sub_psi = sector(mesh, psi, cfg) if cfg.planes else (mesh, psi)
    with _stage("deform"):
        dom = refine_until_fit(sub, sub_psi, cfg.R / 5.0, max_rounds=cfg.max_refine_rounds)
    _, vd, poly = remesh(dom, cfg.R, cfg)
    save_obj(poly, ns.out)
    if ns.deformed_out:
        save_obj(dom.deformed, ns.deformed_out)
    if ns.labels_out:
        vd.save_labels(ns.labels_out)
    if ns.seeds_out:
        _write_seeds(poly, ns.seeds_out)


def cmd_regularize(ns) -> None:
    cfg = _config(ns)
    poly = load_poly_obj(ns.poly)
    if ns.seeds:
        poly.seed_points = _read_seeds(ns.seeds)
    poly = finish(poly, cfg)
    save_obj(poly, ns.out)
    if ns.metrics_out:
        reg.save_metrics_csv(poly, ns.metrics_out)


def cmd_evaluate(ns) -> None:
    cfg = _config(ns)
    poly = load_poly_obj(ns.poly)
    with _stage("evaluate"):
        model = build_model(poly, cfg)
        rep = frame.evaluate(model)
    doc = rep.to_json()
    if ns.reference:
        ref = build_model(load_poly_obj(ns.reference), cfg)
        doc["equivalence"] = frame.check_equivalence(ref, model)
    Path(ns.out).write_text(json.dumps(doc, indent=1))
    if ns.forces_out:
        frame.save_axial_forces(model, rep, ns.forces_out)


def cmd_pipeline(ns) -> None:
    cfg = _config(ns, input_mesh=ns.mesh, output_dir=ns.output_dir)
    if not cfg.input_mesh or not cfg.output_dir:
        raise ValueError("both --mesh and --output-dir are required (or input_mesh/output_dir in the config)")
    res = run_pipeline(cfg)
    log.info("wrote %s (%d faces)", cfg.output_dir, len(res.gridshell.faces))


def cmd_sweep(ns) -> None:
    cfg = _config(ns, input_mesh=ns.mesh)
    if not cfg.input_mesh:
        raise ValueError("--mesh is required (or input_mesh in the config)")
    rows = sweep(cfg, ns.D_values, ns.A_values, ns.reps)
    save_sweep_csv(rows, ns.out)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gridshell", description="Stress-driven grid-shell generation")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="membrane stress analysis of a triangle mesh")
    p.add_argument("--mesh", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="stress field JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("field", help="stress tensors to a processed direction/density/anisotropy field")
    p.add_argument("--mesh", required=True, type=Path)
    p.add_argument("--stress", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="field JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("remesh", help="deform, sample, relax and extract the tessellation")
    p.add_argument("--mesh", required=True, type=Path)
    p.add_argument("--field", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="polygon OBJ")
    p.add_argument("--deformed-out", type=Path)
    p.add_argument("--labels-out", type=Path)
    p.add_argument("--seeds-out", type=Path, help="per-face seed positions (needed for welding)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_remesh)

    p = sub.add_parser("regularize", help="regularize polygons and weld symmetric copies")
    p.add_argument("--poly", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--metrics-out", type=Path)
    p.add_argument("--seeds", type=Path, help="seed positions written by remesh")
    _add_config_flags(p)
    p.set_defaults(func=cmd_regularize)

    p = sub.add_parser("evaluate", help="frame analysis of a polygon mesh")
    p.add_argument("--poly", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="report JSON")
    p.add_argument("--forces-out", type=Path)
    p.add_argument("--reference", type=Path, help="compare total length and mass with this mesh")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run every stage and write the artifact bundle")
    p.add_argument("--mesh", type=Path)
    p.add_argument("--output-dir", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("sweep", help="pipeline over a grid of D and A values")
    p.add_argument("--mesh", type=Path)
    p.add_argument("--D-values", dest="D_values", type=float, nargs="+", required=True)
    p.add_argument("--A-values", dest="A_values", type=float, nargs="+", required=True)
    p.add_argument("--reps", type=int, default=3)
    p.add_argument("--out", required=True, type=Path, help="CSV")
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(ns.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        ns.func(ns)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: [{ns.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
