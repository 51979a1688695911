"""Verification toolkit for a second-order conformal metric flow.

Jet-based tensor calculus, soliton residuals and fits, warped-product
constructions, hypersurface shape-operator machinery, a leapfrog flow
integrator, and a JSON-scene CLI.
"""

from .chart import (Chart, ChartError, MetricField, ScalarField, VectorField,
                    euclidean_metric)
from .exprjet import ExprError, Jet, evaluate_jet, evaluate_value, parse_expression
from .scene import SceneConfig, SceneError, load_scene, run_tasks, serialize_report
from .soliton import (FitResult, SolitonConstants, SolitonReport,
                      fit_soliton_constants, soliton_report, soliton_residual)
from .tensor import Geometry, scalar_curvature

__version__ = "0.1.0"

__all__ = [
    "Chart", "ChartError", "MetricField", "ScalarField", "VectorField",
    "euclidean_metric", "ExprError", "Jet", "evaluate_jet", "evaluate_value",
    "parse_expression", "SceneConfig", "SceneError", "load_scene", "run_tasks",
    "serialize_report", "FitResult", "SolitonConstants", "SolitonReport",
    "fit_soliton_constants", "soliton_report", "soliton_residual",
    "Geometry", "scalar_curvature", "__version__",
]
