"""End-to-end pipeline runs, configs and the parameter sweep."""
import json
import math
from pathlib import Path

import numpy as np
import pytest

from gridshell import fixtures
from gridshell.mesh import save_obj
from gridshell.pipeline import (
    SWEEP_FIELDS,
    PipelineConfig,
    PipelineError,
    derived_seed,
    run_pipeline,
    save_sweep_csv,
    sweep,
)


@pytest.fixture(scope="module")
def square_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("square")
    mesh_path = out / "square.obj"
    save_obj(fixtures.grid(8, 8, 8.0, 8.0), mesh_path)
    cfg = PipelineConfig(input_mesh=str(mesh_path), output_dir=str(out / "bundle"), R=1.0, regularize_iters=30)
    return cfg, run_pipeline(cfg)


def test_flat_square_is_hex_dominant(square_run):
    cfg, res = square_run
    hist = res.summary["arity_histogram"]
    assert max(hist, key=hist.get) == "6"
    res.gridshell.validate()
    assert res.summary["fold_overs"] == 0


def test_bundle_contents(square_run):
    cfg, res = square_run
    out = cfg.output_dir
    names = {"gridshell.obj", "field.json", "deformed.obj", "metrics.csv", "labels.csv",
             "axial_forces.csv", "stress.json", "report.json"}
    assert names <= {p.name for p in Path(out).iterdir()}
    report = json.loads((Path(out) / "report.json").read_text())
    assert report["schema_version"] == 1
    assert report["config"]["schema_version"] == 1 and "output_dir" not in report["config"]
    assert report["summary"]["faces"] == len(res.gridshell.faces)
    assert report["frame"]["delta_max"] == pytest.approx(res.report.delta_max)
    for name in ("field.json", "stress.json"):
        assert json.loads((Path(out) / name).read_text())["schema_version"] == 1


def test_rerun_is_byte_identical(square_run, tmp_path):
    cfg, _ = square_run
    again = PipelineConfig(**{**cfg.__dict__, "output_dir": str(tmp_path)})
    run_pipeline(again)
    for name in ("gridshell.obj", "report.json", "metrics.csv", "labels.csv"):
        assert (Path(cfg.output_dir) / name).read_bytes() == (tmp_path / name).read_bytes()


def test_higher_density_ratio_gives_more_faces():
    mesh = fixtures.grid(6, 6, 4.0, 4.0)
    one = run_pipeline(PipelineConfig(R=1.0, D=1.0, regularize_iters=1), mesh, write=False)
    four = run_pipeline(PipelineConfig(R=1.0, D=4.0, regularize_iters=1), mesh, write=False)
    assert len(four.gridshell.faces) > len(one.gridshell.faces)


def test_doubling_density_ratio_never_loses_seeds():
    mesh = fixtures.strip(6.0, 2.0, 24, 8)
    counts = []
    for D in (1.0, 2.0, 4.0):
        res = run_pipeline(PipelineConfig(R=1.0, D=D, regularize_iters=1), mesh, write=False)
        counts.append(sum(res.summary["seeds"].values()))
    assert counts == sorted(counts)


def test_sweep_rows_and_means(tmp_path):
    mesh = fixtures.grid(4, 4, 3.0, 3.0)
    cfg = PipelineConfig(R=1.5, regularize_iters=5, rng_seed=7)
    rows = sweep(cfg, [1.0], [1.0], 3, mesh=mesh)
    assert len(rows) == 4
    runs, mean = rows[:3], rows[3]
    assert [r["rep"] for r in runs] == [0, 1, 2]
    assert all(r["status"] == "ok" for r in runs)
    assert [r["rng_seed"] for r in runs] == [derived_seed(7, 0, 0, k) for k in range(3)]
    assert len({r["rng_seed"] for r in runs}) == 3
    assert mean["rep"] == "mean" and mean["status"] == "3/3 ok"
    assert mean["faces"] == pytest.approx(np.mean([r["faces"] for r in runs]))
    save_sweep_csv(rows, tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_FIELDS) and len(lines) == 5


def test_sweep_rejects_empty_lists():
    with pytest.raises(ValueError):
        sweep(PipelineConfig(), [], [1.0], 1, mesh=fixtures.unit_square())
    with pytest.raises(ValueError):
        sweep(PipelineConfig(), [1.0], [1.0], 0, mesh=fixtures.unit_square())


def test_derived_seeds_are_stable_and_distinct():
    seeds = {derived_seed(0, i, j, r) for i in range(3) for j in range(3) for r in range(3)}
    assert len(seeds) == 27
    assert derived_seed(0, 1, 2, 0) == derived_seed(0, 1, 2, 0)
    assert derived_seed(0, 1, 2, 0) != derived_seed(1, 1, 2, 0)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError, match="D and A"):
        PipelineConfig(D=0.5)
    with pytest.raises(ValueError):
        PipelineConfig(R=0)
    with pytest.raises(ValueError):
        PipelineConfig(supports="everywhere")
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"D": 2.0, "not_a_key": 1}))
    with pytest.raises(ValueError, match="not_a_key"):
        PipelineConfig.from_json(path)
    path.write_text(json.dumps({"schema_version": 1, "D": 2.0}))
    cfg = PipelineConfig.from_json(path, A=3.0)
    assert (cfg.D, cfg.A) == (2.0, 3.0)


def test_config_round_trip(tmp_path):
    cfg = PipelineConfig(D=2.0, symmetry_planes=[{"point": [0, 0, 0], "normal": [1, 0, 0]}], target_length=30.0)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_json()))
    assert PipelineConfig.from_json(path) == PipelineConfig(**{**cfg.__dict__, "output_dir": ""})


def test_stage_is_named_in_failures():
    with pytest.raises(PipelineError, match=r"^\[load\]") as info:
        run_pipeline(PipelineConfig(input_mesh="/nonexistent/mesh.obj"), write=False)
    assert info.value.stage == "load"


def test_unsupported_closed_shell_fails_in_analysis():
    with pytest.raises(PipelineError) as info:
        run_pipeline(PipelineConfig(), fixtures.icosahedron(), write=False)
    assert info.value.stage == "analyze"


def test_target_length_bisection():
    mesh = fixtures.grid(6, 6, 4.0, 4.0)
    base = run_pipeline(PipelineConfig(R=1.0, regularize_iters=5), mesh, write=False)
    target = 1.2 * base.report.total_length
    res = run_pipeline(PipelineConfig(R=1.0, regularize_iters=5, target_length=target), mesh, write=False)
    assert abs(res.report.total_length - target) / target <= 0.05
    assert res.R < 1.0 and math.isfinite(res.R)
