"""Finite-difference laboratory for V-Laplacians on catalog Riemannian charts."""

from .comparison import laplacian_comparison_check, riccati_theta, theta_closed_form
from .estimates import check_cheng_yau, check_hamilton, check_hessian, check_lemma_H, check_li_yau
from .expr import FieldExpr, parse_expr, to_text
from .fields import covariant_hessian, gradient, laplace_beltrami, v_laplacian
from .geometry import curvature_bounds, make_setup, riemann_ricci_scalar
from .grid import CATALOG, ManifoldChart, build_manifold
from .heat import HeatRun, run_weighted_heat, solve_semilinear, solve_v_harmonic
from .identities import bochner_residual, hessian_evolution_residual, parabolic_identity_residual
from .killing import killing_criteria_residual, killing_energy, run_killing_flow
from .records import EstimateReport, ResidualReport, refine
from .reports import CheckRecord, emit_report, parse_report
from .suite import RunConfig, convergence_study, load_config, run_suite

__version__ = "0.1.0"

__all__ = [
    "CATALOG", "CheckRecord", "EstimateReport", "FieldExpr", "HeatRun", "ManifoldChart",
    "ResidualReport", "RunConfig", "bochner_residual", "build_manifold", "check_cheng_yau",
    "check_hamilton", "check_hessian", "check_lemma_H", "check_li_yau", "convergence_study",
    "covariant_hessian", "curvature_bounds", "emit_report", "gradient",
    "hessian_evolution_residual", "killing_criteria_residual", "killing_energy",
    "laplace_beltrami", "laplacian_comparison_check", "load_config", "make_setup",
    "parabolic_identity_residual", "parse_expr", "parse_report", "refine", "riccati_theta",
    "riemann_ricci_scalar", "run_killing_flow", "run_suite", "run_weighted_heat",
    "solve_semilinear", "solve_v_harmonic", "theta_closed_form", "to_text", "v_laplacian",
]
