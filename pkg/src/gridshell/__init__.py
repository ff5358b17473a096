"""Stress-driven grid-shell generation.

A membrane analysis of the input surface yields a principal stress field;
the field drives a metric deformation of the surface on which a discrete
centroidal Voronoi tessellation is built and mapped back. The polygons are
regularized and the result is evaluated as a rigid-jointed steel frame.
"""
from .mesh import MeshError, PolyMesh, TriMesh, load_obj, load_poly_obj, save_obj
from .shell_fem import ShellAnalysisConfig, StressTensorField, assemble_and_solve, principal_decompose
from .stress_field import PsiField, SymmetryPlane, lipschitz_saturate, rescale, smooth_line_field, symmetrize
from .deform import DeformedDomain, deform, map_back, refine_until_fit
from .acvt import SeedSet, VoronoiState, centroid_by_quadric, extract_cvt, lloyd_relax, poisson_sample
from .regularizer import (
    RegularizerConfig,
    per_polygon_targets,
    planarity,
    regularity,
    regularize,
    symmetrize_tessellation,
)
from .frame import (
    EvalReport,
    FrameModel,
    build_frame,
    check_equivalence,
    estimate_linear_buckling,
    solve_linear_static,
)
from .pipeline import PipelineConfig, run_pipeline, sweep

__version__ = "0.1.0"
