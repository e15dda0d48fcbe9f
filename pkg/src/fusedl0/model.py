"""Smooth losses, the regularized objective and the Lipschitz estimate."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .prox import ProxParams

__all__ = [
    "LossOracle",
    "LeastSquares",
    "StudentT",
    "CustomLoss",
    "ProblemSpec",
    "eval_F",
    "estimate_L1",
    "student_t_derivatives",
    "power_iteration",
]


def student_t_derivatives(r, nu: float):
    """Per-component ``log(1 + r^2/nu)`` and its first two derivatives."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    r = np.asarray(r, dtype=float)
    s = nu + r * r
    return np.log1p(r * r / nu), 2.0 * r / s, 2.0 * (nu - r * r) / (s * s)


class LossOracle:
    """Generalized linear loss ``f(x) = sum_i h((A x - b)_i)``.

    Subclasses provide ``_h(r) -> (value, first, second)`` and the bound
    ``sup_curvature`` on ``|h''|``.
    """

    kind = "glm"
    sup_curvature = 1.0

    def __init__(self, A, b):
        self.A = A if sp.issparse(A) else np.asarray(A, dtype=float)
        if sp.issparse(self.A):
            self.A = sp.csr_matrix(self.A, dtype=float)
        self.b = np.asarray(b, dtype=float).ravel()
        if self.A.ndim != 2 or self.A.shape[0] != self.b.size:
            raise ValueError(f"A is {self.A.shape} but b has length {self.b.size}")
        self._AT = self.A.T.tocsr() if sp.issparse(self.A) else self.A.T

    @property
    def design_matrix(self):
        return self.A

    @property
    def offset(self):
        return self.b

    @property
    def n(self) -> int:
        return self.A.shape[1]

    def residual(self, x):
        return self.A @ x - self.b

    def _h(self, r):
        raise NotImplementedError

    def value(self, x) -> float:
        return float(np.sum(self._h(self.residual(x))[0]))

    def gradient(self, x) -> np.ndarray:
        return self._AT @ self._h(self.residual(x))[1]

    def value_and_gradient(self, x):
        h, dh, _ = self._h(self.residual(x))
        return float(np.sum(h)), self._AT @ dh

    def hessian_inner_diag(self, x) -> np.ndarray:
        """Diagonal of ``h''(A x - b)``."""
        return self._h(self.residual(x))[2]

    def hessian(self, x) -> np.ndarray:
        A = self.A.toarray() if sp.issparse(self.A) else self.A
        return A.T @ (self.hessian_inner_diag(x)[:, None] * A)


class LeastSquares(LossOracle):
    """``0.5 * ||A x - b||^2``."""

    kind = "least_squares"
    sup_curvature = 1.0

    def _h(self, r):
        return 0.5 * r * r, r, np.ones_like(r)


class StudentT(LossOracle):
    """``sum_i log(1 + (A x - b)_i^2 / nu)``; nonconvex for ``|r| > sqrt(nu)``."""

    kind = "student_t"

    def __init__(self, A, b, nu: float = 1.0):
        if not nu > 0:
            raise ValueError("nu must be positive")
        super().__init__(A, b)
        self.nu = float(nu)
        self.sup_curvature = 2.0 / self.nu

    def _h(self, r):
        return student_t_derivatives(r, self.nu)


class CustomLoss:
    """Loss given by explicit callbacks; only the ``G3`` Hessian model applies."""

    kind = "custom"

    def __init__(self, n: int, value: Callable, gradient: Callable, hessian: Callable,
                 lipschitz: float | None = None):
        self._n = n
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.lipschitz = lipschitz

    @property
    def n(self) -> int:
        return self._n

    def value(self, x) -> float:
        return float(self._value(x))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self._gradient(x), dtype=float)

    def value_and_gradient(self, x):
        return self.value(x), self.gradient(x)

    def hessian(self, x) -> np.ndarray:
        return np.asarray(self._hessian(x), dtype=float)


@dataclass
class ProblemSpec:
    """``F = f + lam1*||Bx||_0 + lam2*||x||_0 + indicator(box)``."""

    loss: LossOracle | CustomLoss
    params: ProxParams
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        lo, hi = self.params.bounds(self.n)
        self.lower, self.upper = lo, hi

    @property
    def n(self) -> int:
        return self.loss.n

    def feasible(self, x) -> bool:
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def g(self, x) -> float:
        if not self.feasible(x):
            return np.inf
        return (self.params.lam1 * np.count_nonzero(x[1:] != x[:-1])
                + self.params.lam2 * np.count_nonzero(x))

    def F(self, x) -> float:
        return eval_F(self, x)


def eval_F(spec: ProblemSpec, x) -> float:
    """Objective value; ``+inf`` off the box.  Zeros are detected exactly."""
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.n,):
        raise ValueError(f"x has shape {x.shape}, expected ({spec.n},)")
    g = spec.g(x)
    if not np.isfinite(g):
        return np.inf
    return spec.loss.value(x) + g


def power_iteration(matvec: Callable, n: int, rtol: float = 1e-3, max_iter: int = 10_000,
                    seed: int = 0) -> float:
    """Largest eigenvalue of a symmetric PSD operator."""
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = matvec(v)
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    raise RuntimeError(f"power iteration did not converge in {max_iter} steps")


def estimate_L1(spec: ProblemSpec, rtol: float = 1e-3) -> float:
    """Lipschitz estimate ``sup|h''| * sigma_max(A)^2`` of the loss gradient."""
    loss = spec.loss
    if isinstance(loss, CustomLoss):
        if loss.lipschitz is None:
            raise ValueError("custom losses must supply a Lipschitz constant")
        return float(loss.lipschitz)
    A, AT = loss.A, loss._AT
    smax2 = power_iteration(lambda v: AT @ (A @ v), loss.n, rtol=rtol)
    return loss.sup_curvature * smax2
