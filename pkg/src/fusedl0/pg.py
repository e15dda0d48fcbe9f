"""Proximal gradient step with backtracking, and the plain PG solver."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ProblemSpec, eval_F
from .prox import prox_scaled

MAX_BACKTRACK = 100


@dataclass
class PGStepResult:
    x_bar: np.ndarray
    mu_bar: float
    m: int
    F_bar: float
    residual: float
    residual_inf: float
    n_pieces_max: int = 0


def pg_step(spec: ProblemSpec, x, mu0: float, tau: float = 2.0, alpha: float = 1e-8,
            F_x: float | None = None, grad=None) -> PGStepResult:
    """Find the smallest ``m`` such that ``mu = mu0*tau**m`` gives sufficient decrease.

    The trial point is ``prox_{g/mu}(x - grad f(x)/mu)`` and it is accepted when
    ``F(x_bar) <= F(x) - alpha/2 * ||x - x_bar||^2``.

    Raises
    ------
    RuntimeError
        If no acceptable ``mu`` is found within ``MAX_BACKTRACK`` doublings.
    """
    if not mu0 > 0:
        raise ValueError("mu0 must be positive")
    if not tau > 1:
        raise ValueError("tau must exceed 1")
    if F_x is None:
        F_x = eval_F(spec, x)
    if grad is None:
        grad = spec.loss.gradient(x)
    # absorbs rounding in F when x_bar agrees with x to the last bits
    slack = 8 * np.finfo(float).eps * max(1.0, abs(F_x))
    mu = mu0
    for m in range(MAX_BACKTRACK + 1):
        res = prox_scaled(x - grad / mu, mu, spec.params)
        x_bar = res.x
        d = x - x_bar
        dd = float(d @ d)
        F_bar = eval_F(spec, x_bar)
        if F_bar <= F_x - 0.5 * alpha * dd + slack:
            return PGStepResult(x_bar=x_bar, mu_bar=mu, m=m, F_bar=F_bar,
                                residual=mu * np.sqrt(dd),
                                residual_inf=mu * float(np.max(np.abs(d), initial=0.0)),
                                n_pieces_max=res.n_pieces_max)
        mu *= tau
    raise RuntimeError(
        f"PG line search failed after {MAX_BACKTRACK} backtracks; the Lipschitz "
        "estimate or the prox is inconsistent")


def pg_solve(spec: ProblemSpec, config=None):
    """Proximal gradient method: the hybrid loop with the Newton step disabled."""
    from .driver import SolverConfig, _solve

    config = SolverConfig() if config is None else config
    return _solve(spec, config, newton=False)
