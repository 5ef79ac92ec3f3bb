"""Least-squares convex regression with gradient constraints."""
from .admm import AdmmConfig, admm_fit
from .constraints import (Box, DataLipschitz, Free, LipschitzBall, Monotone, PerPoint,
                          parse_constraint, project)
from .data import generate_synthetic, load_csv, standardize
from .estimator import (load_model, moreau_smooth, predict, predict_batch, save_model,
                        subgradient)
from .lipschitz import build_perpoint_problem, estimate_lipschitz
from .palm import PalmConfig, SsnConfig, palm_fit
from .problem import FittedModel, ProblemData, SolverReport
from .regressor import ConvexRegressor

__all__ = [
    "AdmmConfig", "admm_fit", "PalmConfig", "SsnConfig", "palm_fit",
    "Box", "DataLipschitz", "Free", "LipschitzBall", "Monotone", "PerPoint",
    "parse_constraint", "project", "generate_synthetic", "load_csv", "standardize",
    "load_model", "save_model", "moreau_smooth", "predict", "predict_batch", "subgradient",
    "build_perpoint_problem", "estimate_lipschitz", "FittedModel", "ProblemData",
    "SolverReport", "ConvexRegressor",
]
