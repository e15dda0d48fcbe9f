"""
Exact proximal mapping of the fused l0 regularizer with a box constraint.

For ``z`` in R^n this module returns a global minimizer of::

    h(x; z) = 0.5*||x - z||^2 + lam1*#{i : x_i != x_{i+1}} + lam2*||x||_0,
    subject to lower <= x <= upper,

by dynamic programming over the trailing segment value.  The stage-s value
function (best prefix cost as a function of the value of the last segment)
is piecewise quadratic; each piece remembers the changepoint that produced
it, so the backward pass only needs the argmin and tag of every stage.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .pwq import (
    PiecewiseQuadratic,
    _add_l0_box,
    _add_quadratic,
    _global_min,
    _min_with_constant,
)

__all__ = [
    "ProxParams",
    "ProxResult",
    "prox_fused_l0",
    "prox_scaled",
    "brute_force_prox",
    "fused_objective",
    "segments",
]

BRUTE_FORCE_MAX_N = 12


@dataclass(frozen=True)
class ProxParams:
    """Regularizer parameters ``(lam1, lam2, lower, upper)``.

    ``lower`` and ``upper`` are broadcast to length ``n`` by :meth:`bounds`.
    """

    lam1: float
    lam2: float
    lower: np.ndarray | float = -np.inf
    upper: np.ndarray | float = np.inf

    def __post_init__(self):
        if not (self.lam1 >= 0 and self.lam2 >= 0):
            raise ValueError("lam1 and lam2 must be nonnegative")
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("box must contain the origin (lower <= 0 <= upper)")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    def bounds(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        lo = np.broadcast_to(self.lower, (n,)).astype(float)
        hi = np.broadcast_to(self.upper, (n,)).astype(float)
        return lo, hi

    def scaled(self, mu: float) -> "ProxParams":
        return ProxParams(self.lam1 / mu, self.lam2 / mu, self.lower, self.upper)


@dataclass
class ProxResult:
    x: np.ndarray
    objective: float
    blocks: list[tuple[int, int, float]]
    stage_values: np.ndarray | None = None
    n_pieces: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_pieces_max(self) -> int:
        return int(self.n_pieces.max()) if self.n_pieces is not None and self.n_pieces.size else 0


def segments(x: np.ndarray) -> list[tuple[int, int, float]]:
    """Maximal constant runs of ``x`` as ``(start, end, value)``, ``end`` exclusive."""
    x = np.asarray(x)
    if x.size == 0:
        return []
    cuts = np.flatnonzero(x[1:] != x[:-1]) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [x.size]))
    return [(int(s), int(e), float(x[s])) for s, e in zip(starts, ends)]


def fused_objective(x, z, params: ProxParams) -> float:
    """``h(x; z)``; ``+inf`` outside the box."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    lo, hi = params.bounds(x.size)
    if np.any(x < lo) or np.any(x > hi):
        return np.inf
    return (0.5 * float(np.dot(x - z, x - z))
            + params.lam1 * np.count_nonzero(x[1:] != x[:-1])
            + params.lam2 * np.count_nonzero(x))


@njit(cache=True)
def _prox_dp(z, lam1, lam2, lower, upper):
    n = z.size
    arg_t = np.empty(n)
    arg_tag = np.empty(n, dtype=np.int64)
    stage_val = np.empty(n)
    n_pieces = np.empty(n, dtype=np.int64)

    lo = np.array([-np.inf])
    hi = np.array([np.inf])
    a = np.zeros(1)
    b = np.zeros(1)
    c = np.zeros(1)
    tag = np.zeros(1, dtype=np.int64)
    for s in range(n):
        if s > 0:
            lo, hi, a, b, c, tag = _min_with_constant(
                lo, hi, a, b, c, tag, stage_val[s - 1] + lam1, s)
        lo, hi, a, b, c, tag = _add_quadratic(
            lo, hi, a, b, c, tag, 0.5, -z[s], 0.5 * z[s] * z[s])
        lo, hi, a, b, c, tag = _add_l0_box(
            lo, hi, a, b, c, tag, lam2, lower[s], upper[s])
        t, v, tg = _global_min(lo, hi, a, b, c, tag)
        arg_t[s] = t
        arg_tag[s] = tg
        stage_val[s] = v
        n_pieces[s] = lo.size

    x = np.empty(n)
    s = n
    while s > 0:
        i = arg_tag[s - 1]
        x[i:s] = arg_t[s - 1]
        s = i
    return x, stage_val, n_pieces


def prox_fused_l0(z, params: ProxParams, check: bool = True) -> ProxResult:
    """Return one element of the proximal mapping of the fused l0 regularizer at ``z``.

    Parameters
    ----------
    z : array_like, shape (n,)
        Prox center.
    params : ProxParams
        Penalties and box.
    check : bool
        Compare the result against the trivially feasible points ``0`` and
        ``clip(z)`` and raise ``RuntimeError`` if the DP lost to either.

    Returns
    -------
    ProxResult
        ``x``, ``objective = h(x; z)``, the constant blocks of ``x``, the stage
        optima ``H(1..n)`` and the piece count of every stage function.
    """
    z = np.ascontiguousarray(z, dtype=float)
    if z.ndim != 1 or z.size == 0:
        raise ValueError("z must be a non-empty 1-d vector")
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    lo, hi = params.bounds(z.size)
    x, stage_val, n_pieces = _prox_dp(z, float(params.lam1), float(params.lam2), lo, hi)
    obj = fused_objective(x, z, params)
    if check:
        ref = min(fused_objective(np.zeros_like(z), z, params),
                  fused_objective(np.clip(z, lo, hi), z, params))
        if not obj <= ref + 1e-9 * (1.0 + abs(ref)):
            raise RuntimeError(
                f"prox DP returned objective {obj!r} above a trivial candidate {ref!r}")
    return ProxResult(x=x, objective=obj, blocks=segments(x),
                      stage_values=stage_val, n_pieces=n_pieces)


def prox_scaled(z, mu: float, params: ProxParams) -> ProxResult:
    """Element of ``argmin_x mu/2*||x - z||^2 + g(x)``.

    The reported objective is that of the scaled problem.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    res = prox_fused_l0(z, params.scaled(mu))
    res.objective = mu * res.objective
    if res.stage_values is not None:
        res.stage_values = mu * res.stage_values
    return res


def stage_functions(z, params: ProxParams) -> list[PiecewiseQuadratic]:
    """Forward pass only, keeping every stage value function (debugging aid)."""
    z = np.asarray(z, dtype=float)
    lo, hi = params.bounds(z.size)
    f = PiecewiseQuadratic.quadratic()
    out = []
    for s in range(z.size):
        if s > 0:
            f = f.min_with_constant(f.global_min()[1] + params.lam1, s)
        f = f.add_quadratic(0.5, -z[s], 0.5 * z[s] ** 2).add_l0_box(params.lam2, lo[s], hi[s])
        out.append(f)
    return out


def brute_force_prox(z, params: ProxParams) -> ProxResult:
    """Exhaustive prox for small ``n``: every segmentation, best value per block.

    For a fixed segmentation the cost separates over blocks; each block takes
    the better of ``0`` and its mean clipped to the block box.  Counting one
    ``lam1`` per cut over-estimates the cost when neighbours tie, but the
    coarser segmentation covering that case is enumerated too, so the true
    cost of every built candidate is recomputed and the best is kept.
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    if n == 0:
        raise ValueError("z must be non-empty")
    if n > BRUTE_FORCE_MAX_N:
        raise ValueError(f"brute force limited to n <= {BRUTE_FORCE_MAX_N}")
    lo, hi = params.bounds(n)
    best_x, best_h = None, np.inf
    for cuts in itertools.product((False, True), repeat=n - 1):
        bounds = [0] + [i + 1 for i, cut in enumerate(cuts) if cut] + [n]
        x = np.empty(n)
        for s, e in zip(bounds[:-1], bounds[1:]):
            seg = z[s:e]
            blo, bhi = lo[s:e].max(), hi[s:e].min()
            cands = {0.0, min(max(seg.mean(), blo), bhi)}
            vals = [(0.5 * np.sum((v - seg) ** 2) + params.lam2 * (e - s) * (v != 0), v)
                    for v in sorted(cands)]
            x[s:e] = min(vals)[1]
        h = fused_objective(x, z, params)
        if h < best_h:
            best_h, best_x = h, x
    return ProxResult(x=best_x, objective=best_h, blocks=segments(best_x))
