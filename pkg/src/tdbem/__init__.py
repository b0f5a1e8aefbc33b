"""Time-domain boundary elements for the 3D wave equation with Dirichlet data.

Piecewise linear densities in space, pulse functions in time, a residual
based a posteriori estimator and an adaptive refinement loop.
"""

from .adapt import AdaptConfig, AdaptReport, CFLError, CFLWarning, DtPolicy, choose_dt, mark, run_adaptive
from .assembly import (
    BlockToeplitzOperator,
    GalerkinBlock,
    QuadratureConfig,
    QuadratureError,
    assemble_operator,
    assemble_rhs,
    assemble_rhs_all,
)
from .bestapprox import DegenerateFitError, SingularModel, best_approx_rate, fit_rate
from .estimator import IndicatorTable, compute_indicators
from .harness import StudyConfig, run_adaptive_study, run_uniform_study
from .mesh import SurfaceMesh, build_geometry, build_icosphere, build_square_screen, refine
from .potential import EdgePointError, PotentialEvaluator, eval_grad_residual, eval_potential, eval_residual
from .solver import SolverError, SpaceTimeDensity, apply, mot_solve
from .timebasis import TimeGrid

__version__ = "0.1.0"

__all__ = [
    "AdaptConfig", "AdaptReport", "CFLError", "CFLWarning", "DtPolicy", "choose_dt", "mark", "run_adaptive",
    "BlockToeplitzOperator", "GalerkinBlock", "QuadratureConfig", "QuadratureError",
    "assemble_operator", "assemble_rhs", "assemble_rhs_all",
    "DegenerateFitError", "SingularModel", "best_approx_rate", "fit_rate",
    "IndicatorTable", "compute_indicators",
    "StudyConfig", "run_adaptive_study", "run_uniform_study",
    "SurfaceMesh", "build_geometry", "build_icosphere", "build_square_screen", "refine",
    "EdgePointError", "PotentialEvaluator", "eval_grad_residual", "eval_potential", "eval_residual",
    "SolverError", "SpaceTimeDensity", "apply", "mot_solve",
    "TimeGrid",
]
