"""Exact prox of the fused l0 regularizer and the hybrid PG / projected Newton solver."""

from .benchmarks import generate_benchmarks
from .driver import SolveTrace, SolverConfig, pgipn_solve, psnr
from .model import CustomLoss, LeastSquares, ProblemSpec, StudentT, estimate_L1, eval_F
from .pg import pg_solve, pg_step
from .prox import ProxParams, brute_force_prox, prox_fused_l0, prox_scaled
from .pwq import PiecewiseQuadratic

__all__ = [
    "CustomLoss",
    "LeastSquares",
    "PiecewiseQuadratic",
    "ProblemSpec",
    "ProxParams",
    "SolveTrace",
    "SolverConfig",
    "StudentT",
    "brute_force_prox",
    "estimate_L1",
    "eval_F",
    "generate_benchmarks",
    "pg_solve",
    "pg_step",
    "pgipn_solve",
    "prox_fused_l0",
    "prox_scaled",
    "psnr",
]

__version__ = "0.1.0"
