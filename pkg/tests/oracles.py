"""Independent reference computations shared by the unit and acceptance tests."""

from __future__ import annotations

import itertools

import numpy as np
from scipy.optimize import nnls

from fusedl0.newton import ReducedQP


def random_chain_instance(rng, max_blocks=6, max_size=3):
    """Blocks of supported coordinates with per-coordinate boxes and a block state.

    Returns ``(w, gamma, members, lo, hi, block_lo, block_hi)`` where ``gamma``
    is an unaggregated gradient over the supported coordinates.
    """
    nb = int(rng.integers(1, max_blocks + 1))
    sizes = rng.integers(1, max_size + 1, nb)
    n = int(sizes.sum())
    lo = -rng.uniform(0.5, 2.0, n)
    hi = rng.uniform(0.5, 2.0, n)
    members = np.split(np.arange(n), np.cumsum(sizes)[:-1])
    w = np.empty(nb)
    for j, mem in enumerate(members):
        state = rng.choice(["interior", "lower", "upper", "fixed"])
        if state == "fixed":
            v = rng.uniform(-0.4, 0.4)
            lo[mem] = np.minimum(lo[mem], v - 0.1)
            hi[mem] = np.maximum(hi[mem], v + 0.1)
            lo[rng.choice(mem)] = v
            hi[rng.choice(mem)] = v
        blo, bhi = lo[mem].max(), hi[mem].min()
        w[j] = {"interior": rng.uniform(blo, bhi), "lower": blo, "upper": bhi,
                "fixed": blo}[state]
    gamma = rng.normal(size=n) * rng.choice([1e-3, 1.0, 10.0])
    block_lo = np.array([lo[m].max() for m in members])
    block_hi = np.array([hi[m].min() for m in members])
    return w, gamma, members, lo, hi, block_lo, block_hi


def min_norm_residual(w, gamma, members, lo, hi) -> float:
    """``min ||gamma + B^T lam + nu||`` over chain multipliers and box normals.

    Every multiplier is split into sign-constrained parts so that the problem
    becomes a nonnegative least-squares fit (Lawson-Hanson active set), in
    the unaggregated coordinates and without the block closed form.
    """
    n = gamma.size
    x = np.concatenate([np.full(m.size, w[j]) for j, m in enumerate(members)])
    cols = []
    for m in members:
        for i in m[:-1]:
            c = np.zeros(n)
            c[i], c[i + 1] = 1.0, -1.0
            cols += [c, -c]
    for i in range(n):
        e = np.zeros(n)
        e[i] = 1.0
        if x[i] <= lo[i]:
            cols.append(-e)
        if x[i] >= hi[i]:
            cols.append(e)
    if not cols:
        return float(np.linalg.norm(gamma))
    _, rnorm = nnls(np.array(cols).T, -gamma, maxiter=50 * len(cols))
    return float(rnorm)


def random_box_qp(rng, max_blocks=8) -> ReducedQP:
    nb = int(rng.integers(1, max_blocks + 1))
    M = rng.normal(size=(nb + 2, nb))
    H = M.T @ M + 0.1 * np.eye(nb)
    lo = -rng.uniform(0.0, 1.5, nb)
    hi = rng.uniform(0.0, 1.5, nb)
    fixed = rng.random(nb) < 0.1
    hi[fixed] = lo[fixed]
    w0 = rng.uniform(lo, hi)
    g = rng.normal(size=nb) * 3.0
    return ReducedQP(H=H, g=g, w0=w0, lower=lo, upper=hi,
                     scale=rng.integers(1, 5, nb).astype(float))


def active_set_qp(qp: ReducedQP, tol=1e-10) -> np.ndarray:
    """Exact minimizer by enumerating lower/upper/free states of every block."""
    H, g, w0, lo, hi = qp.H, qp.g, qp.w0, qp.lower, qp.upper
    nb = g.size
    options = [("lo",) if lo[j] == hi[j] else ("free", "lo", "hi") for j in range(nb)]
    for states in itertools.product(*options):
        w = np.empty(nb)
        free = np.array([s == "free" for s in states])
        for j, s in enumerate(states):
            if s == "lo":
                w[j] = lo[j]
            elif s == "hi":
                w[j] = hi[j]
        if free.any():
            fixed = ~free
            rhs = -(g[free] + H[np.ix_(free, fixed)] @ (w[fixed] - w0[fixed]))
            w[free] = w0[free] + np.linalg.solve(H[np.ix_(free, free)], rhs)
            if np.any(w[free] < lo[free] - tol) or np.any(w[free] > hi[free] + tol):
                continue
        grad = g + H @ (w - w0)
        ok = all(
            s == "free" or lo[j] == hi[j]
            or (s == "lo" and grad[j] >= -tol) or (s == "hi" and grad[j] <= tol)
            for j, s in enumerate(states)
        )
        if ok:
            return np.clip(w, lo, hi)
    raise RuntimeError("no KKT point found")
