"""Adaptive stabilized finite elements by residual minimization in a
discrete dG norm, with fine-scale and adjoint reconstructions."""
from .adapt import AdaptiveResult, ConvergenceRecord, adaptive_loop, convergence_rate, dorfler_mark, localize_estimator
from .fem import build_space, interpolate
from .forms import ProblemDef
from .linalg import SolverError
from .mesh import Mesh, lshape_mesh, rectangle_mesh, refine
from .problems import REGISTRY, Benchmark, compute_errors, get_benchmark
from .solver import (
    Discretization,
    NewtonConfig,
    NewtonError,
    ScaleSolutions,
    solve_linear_resmin,
    solve_nonlinear_dg,
    solve_nonlinear_resmin,
)

__all__ = [
    "AdaptiveResult",
    "Benchmark",
    "ConvergenceRecord",
    "Discretization",
    "Mesh",
    "NewtonConfig",
    "NewtonError",
    "ProblemDef",
    "REGISTRY",
    "ScaleSolutions",
    "SolverError",
    "adaptive_loop",
    "build_space",
    "compute_errors",
    "convergence_rate",
    "dorfler_mark",
    "get_benchmark",
    "interpolate",
    "localize_estimator",
    "lshape_mesh",
    "rectangle_mesh",
    "refine",
    "solve_linear_resmin",
    "solve_nonlinear_dg",
    "solve_nonlinear_resmin",
]
