"""
Inexact projected regularized Newton step on the support polyhedron.

Given an iterate ``x`` whose supports ``S = supp(x)`` and ``T = supp(Bx)``
are trusted, the step minimizes the quadratic model of ``f`` over::

    Pi = {y in box : y_i = 0 for i not in S, y_i = y_{i+1} for i not in T}.

Coordinates outside ``S`` are dropped and every run of ``S`` tied together
by equality constraints collapses to one block variable, which turns the
subproblem into a strongly convex QP over a box in block coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator

from .model import CustomLoss, ProblemSpec, power_iteration

DENSE_BLOCK_LIMIT = 2000
MAX_ARMIJO = 60


class InnerSolverError(RuntimeError):
    pass


class LineSearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class SupportPair:
    """``T``: indices ``i`` with ``x_i != x_{i+1}``; ``S``: indices with ``x_i != 0``."""

    T: np.ndarray
    S: np.ndarray


def supports(x) -> SupportPair:
    x = np.asarray(x)
    return SupportPair(T=np.flatnonzero(x[1:] != x[:-1]), S=np.flatnonzero(x))


def check_switch(x, x_bar) -> bool:
    """True iff ``x`` and ``x_bar`` share both supports (exact zero tests)."""
    x = np.asarray(x)
    x_bar = np.asarray(x_bar)
    return bool(np.array_equal(x != 0, x_bar != 0)
                and np.array_equal(x[1:] != x[:-1], x_bar[1:] != x_bar[:-1]))


def check_relaxed_switch(x, x_bar, k: int, eta1: float, eta2: float) -> bool:
    """Allow up to ``eta*n/k`` support mismatches; reduces to the strict test once that is below 1."""
    if k < 1:
        raise ValueError("iteration counter must be >= 1")
    x = np.asarray(x)
    x_bar = np.asarray(x_bar)
    n = x.size
    dB = np.count_nonzero((x[1:] != x[:-1]) != (x_bar[1:] != x_bar[:-1]))
    dx = np.count_nonzero((x != 0) != (x_bar != 0))
    return bool(dB <= eta1 * n / k and dx <= eta2 * n / k)


@dataclass
class RegularizedHessian:
    """``G_k`` restricted to ``S``.

    Either ``A_S^T diag(weights) A_S + ridge*I`` (generalized linear losses) or
    ``dense + ridge*I``.
    """

    S: np.ndarray
    ridge: float
    A_S: object = None
    weights: np.ndarray | None = None
    dense: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.S.size

    def todense(self) -> np.ndarray:
        if self.dense is not None:
            G = self.dense.copy()
        else:
            A = self.A_S.toarray() if sp.issparse(self.A_S) else np.asarray(self.A_S)
            G = A.T @ (self.weights[:, None] * A)
        G[np.diag_indices_from(G)] += self.ridge
        return G

    def aggregate(self, P: sp.csr_matrix):
        """``P^T G P`` as a dense array, or a ``LinearOperator`` beyond the dense limit."""
        sizes = np.asarray(P.sum(axis=0)).ravel()
        nb = P.shape[1]
        if self.dense is not None:
            H = np.asarray((P.T @ (P.T @ self.dense).T).T)
            H[np.diag_indices_from(H)] += self.ridge * sizes
            return H
        A_blk = self.A_S @ P
        w = self.weights
        if nb <= DENSE_BLOCK_LIMIT:
            Ad = A_blk.toarray() if sp.issparse(A_blk) else np.asarray(A_blk)
            H = Ad.T @ (w[:, None] * Ad)
            H[np.diag_indices_from(H)] += self.ridge * sizes
            return H
        A_blk = sp.csr_matrix(A_blk)
        A_blkT = A_blk.T.tocsr()
        ridge = self.ridge

        def mv(v):
            v = np.ravel(v)
            return A_blkT @ (w * (A_blk @ v)) + ridge * sizes * v

        return LinearOperator((nb, nb), matvec=mv, rmatvec=mv, dtype=float)


def build_Gk(spec: ProblemSpec, x, reg: float, variant: str = "G2", b1: float = 1e-3,
             b2: float = 1.0, S=None) -> RegularizedHessian:
    """Regularized Hessian model on ``S = supp(x)``.

    ``G1``: Hessian plus ``b2*[-min h'']_+ A^T A`` (convexified through the design).
    ``G2``: ``A^T [h'']_+ A`` (negative curvature clipped per residual).
    ``G3``: Hessian plus ``b2*[-lambda_min]_+ I`` (any twice differentiable loss).
    All three then add ``b1*reg*I``.
    """
    x = np.asarray(x, dtype=float)
    S = supports(x).S if S is None else np.asarray(S)
    loss = spec.loss
    ridge = b1 * reg
    if variant in ("G1", "G2"):
        if isinstance(loss, CustomLoss):
            raise ValueError(f"{variant} needs a generalized linear loss")
        d = loss.hessian_inner_diag(x)
        A_S = loss.A[:, S]
        if variant == "G2":
            w = np.maximum(d, 0.0)
        else:
            w = d + b2 * max(-float(d.min(initial=0.0)), 0.0)
        return RegularizedHessian(S=S, ridge=ridge, A_S=A_S, weights=w)
    if variant == "G3":
        if isinstance(loss, CustomLoss):
            Hss = loss.hessian(x)[np.ix_(S, S)]
        else:
            d = loss.hessian_inner_diag(x)
            A_S = loss.A[:, S]
            A_S = A_S.toarray() if sp.issparse(A_S) else np.asarray(A_S)
            Hss = A_S.T @ (d[:, None] * A_S)
        Hss = 0.5 * (Hss + Hss.T)
        lmin = float(sla.eigvalsh(Hss, subset_by_index=[0, 0])[0]) if S.size else 0.0
        return RegularizedHessian(S=S, ridge=b2 * max(-lmin, 0.0) + ridge, dense=Hss)
    raise ValueError(f"unknown G_k variant {variant!r}")


@dataclass
class BlockStructure:
    """Partition of ``S`` into runs tied by equality constraints."""

    members: list[np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    P: sp.csr_matrix = field(repr=False)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([m.size for m in self.members], dtype=float)

    def __len__(self) -> int:
        return len(self.members)

    def lift(self, w, n: int) -> np.ndarray:
        """Embed block values into R^n with zeros off the support."""
        y = np.zeros(n)
        for mem, v in zip(self.members, w):
            y[mem] = v
        return y


@dataclass
class ReducedQP:
    """``min g^T (w - w0) + 0.5 (w - w0)^T H (w - w0)`` over ``lower <= w <= upper``."""

    H: object
    g: np.ndarray
    w0: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    scale: np.ndarray

    @property
    def size(self) -> int:
        return self.g.size

    def model_gradient(self, w) -> np.ndarray:
        return self.g + self.H @ (w - self.w0)

    def theta_decrease(self, w) -> float:
        d = w - self.w0
        return float(self.g @ d + 0.5 * d @ (self.H @ d))

    def residual(self, w) -> float:
        return box_stationarity_residual(w, self.model_gradient(w), (self.lower, self.upper),
                                         self.scale)


def block_partition(S, T) -> list[np.ndarray]:
    """Maximal runs of ``S`` linked by ``i not in T`` with ``i, i+1 in S``."""
    S = np.asarray(S)
    if S.size == 0:
        return []
    inT = np.zeros(S.max() + 2, dtype=bool)
    inT[np.asarray(T, dtype=int)[np.asarray(T) <= S.max()]] = True
    linked = (S[1:] == S[:-1] + 1) & ~inT[S[:-1]]
    cuts = np.flatnonzero(~linked) + 1
    return np.split(S, cuts)


def reduce_and_aggregate(spec: ProblemSpec, x, T, S, Gk: RegularizedHessian, grad=None):
    """Build the block-aggregated box QP of the Newton subproblem.

    Raises
    ------
    ValueError
        If ``(T, S)`` are not the supports of a feasible ``x``.
    """
    x = np.asarray(x, dtype=float)
    S = np.asarray(S)
    T = np.asarray(T)
    n = x.size
    if not spec.feasible(x):
        raise ValueError("x is infeasible")
    t_mask = np.zeros(max(n - 1, 0), dtype=bool)
    t_mask[T] = True
    s_mask = np.zeros(n, dtype=bool)
    s_mask[S] = True
    if np.any(x[~s_mask] != 0) or np.any(x[:-1][~t_mask] != x[1:][~t_mask]):
        raise ValueError("supports are inconsistent with x")
    # a constraint x_i = x_{i+1} with exactly one side in S would pin that side to 0
    edge = s_mask[:-1] != s_mask[1:]
    if np.any(edge & ~t_mask):
        raise ValueError("an equality constraint forces a supported coordinate to zero")
    members = block_partition(S, T)
    nb = len(members)
    lower = np.array([spec.lower[m].max() for m in members])
    upper = np.array([spec.upper[m].min() for m in members])
    if np.any(lower > upper):
        raise ValueError("empty block box")
    pos = np.concatenate(members) if nb else np.zeros(0, dtype=int)
    col = np.repeat(np.arange(nb), [m.size for m in members])
    # rows of P follow the order of S
    order = np.searchsorted(S, pos)
    P = sp.csr_matrix((np.ones(pos.size), (order, col)), shape=(S.size, nb))
    blocks = BlockStructure(members=members, lower=lower, upper=upper, P=P)
    if grad is None:
        grad = spec.loss.gradient(x)
    g = P.T @ grad[S]
    w0 = np.array([x[m[0]] for m in members])
    H = Gk.aggregate(P) if nb else np.zeros((0, 0))
    return blocks, ReducedQP(H=H, g=g, w0=w0, lower=lower, upper=upper, scale=blocks.sizes)


def box_stationarity_residual(w, grad, box, scale) -> float:
    """Distance from 0 to the subdifferential of the reduced model, in original coordinates.

    ``grad`` holds block-summed model gradients; a block of ``L`` coordinates
    contributes ``rho**2 / L`` where ``rho`` is the part of its gradient not
    absorbed by an active bound.
    """
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    lower, upper = (np.asarray(v, dtype=float) for v in box)
    if np.any(w < lower) or np.any(w > upper):
        raise ValueError("w lies outside the box")
    at_lo = w <= lower
    at_hi = w >= upper
    rho = np.abs(grad)
    rho = np.where(at_lo & ~at_hi, np.maximum(-grad, 0.0), rho)
    rho = np.where(at_hi & ~at_lo, np.maximum(grad, 0.0), rho)
    rho = np.where(at_lo & at_hi, 0.0, rho)
    return float(np.sqrt(np.sum(rho * rho / np.asarray(scale, dtype=float))))


def _lambda_max(H) -> float:
    if isinstance(H, np.ndarray):
        if H.shape[0] == 0:
            return 0.0
        return float(sla.eigvalsh(H, subset_by_index=[H.shape[0] - 1, H.shape[0] - 1])[0])
    # power iteration under-estimates; pad the step bound
    return 1.05 * power_iteration(H.matvec, H.shape[0], rtol=1e-6)


def _apg(qp: ReducedQP, tol: float, max_iter: int, w=None, tol_theta: float = 0.0):
    """Accelerated projected gradient with a monotone restart."""
    lo, hi = qp.lower, qp.upper
    L = _lambda_max(qp.H)
    if L <= 0:
        return np.clip(qp.w0, lo, hi), 0
    w = np.clip(qp.w0 if w is None else w, lo, hi)
    th = qp.theta_decrease(w)
    y = w.copy()
    t = 1.0
    for it in range(max_iter + 1):
        grad_w = qp.model_gradient(w)
        if (box_stationarity_residual(w, grad_w, (lo, hi), qp.scale) <= tol
                and th <= tol_theta):
            return w, it
        w_new = np.clip(y - qp.model_gradient(y) / L, lo, hi)
        th_new = qp.theta_decrease(w_new)
        if th_new > th:
            # restart from w with a plain projected gradient step
            y = w.copy()
            t = 1.0
            w_new = np.clip(w - grad_w / L, lo, hi)
            th_new = qp.theta_decrease(w_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, th, t = w_new, th_new, t_new
    raise InnerSolverError(f"inner solver hit its cap of {max_iter} iterations")


def _projected_newton(qp: ReducedQP, tol: float, max_iter: int, tol_theta: float = 0.0):
    """Active-set projected Newton for a dense box QP.

    Returns ``(w, iters, ok)``; ``ok`` is False when the search stalls, in
    which case ``w`` is still a monotone improvement over ``w0``.
    """
    lo, hi = qp.lower, qp.upper
    H = qp.H
    w = np.clip(qp.w0, lo, hi)
    th = qp.theta_decrease(w)
    fixed = lo >= hi
    for it in range(max_iter + 1):
        grad = qp.model_gradient(w)
        res = box_stationarity_residual(w, grad, (lo, hi), qp.scale)
        if res <= tol and th <= tol_theta:
            return w, it, True
        binding = fixed | ((w <= lo) & (grad > 0)) | ((w >= hi) & (grad < 0))
        free = np.flatnonzero(~binding)
        if free.size == 0:
            return w, it, False
        try:
            cf = sla.cho_factor(H[np.ix_(free, free)])
        except np.linalg.LinAlgError:
            return w, it, False
        d = np.zeros_like(w)
        d[free] = -sla.cho_solve(cf, grad[free])
        step = 1.0
        while step > 1e-12:
            w_new = np.clip(w + step * d, lo, hi)
            th_new = qp.theta_decrease(w_new)
            if th_new <= th + 1e-4 * float(grad @ (w_new - w)):
                break
            step *= 0.5
        else:
            return w, it, False
        if th_new > th:
            return w, it, False
        w, th = w_new, th_new
    return w, max_iter, False


def solve_subproblem_inexact(qp: ReducedQP, tol_abs: float, tol_theta: float = 0.0,
                             max_iter: int = 10_000, method: str = "auto"):
    """Approximately minimize the reduced QP until the residual drops to ``tol_abs``.

    ``method`` is ``"apg"`` (accelerated projected gradient), ``"newton"``
    (active-set projected Newton, dense ``H`` only, falling back to APG when
    it stalls) or ``"auto"`` (Newton for dense ``H``, APG otherwise).  Both
    are monotone from ``w0``, so the model decrease ends at or below
    ``tol_theta`` (default 0).

    Returns
    -------
    w : ndarray
        Block values.
    inner_iters : int
    """
    if not tol_abs >= 0:
        raise ValueError("tolerance must be nonnegative")
    if qp.size == 0:
        return qp.w0.copy(), 0
    if method == "auto":
        method = "newton" if isinstance(qp.H, np.ndarray) else "apg"
    if method == "newton":
        if not isinstance(qp.H, np.ndarray):
            raise ValueError("projected Newton needs a dense H")
        w, it, ok = _projected_newton(qp, tol_abs, min(max_iter, 200), tol_theta)
        if ok:
            return w, it
        w2, it2 = _apg(qp, tol_abs, max_iter - it, w=w, tol_theta=tol_theta)
        return w2, it + it2
    if method == "apg":
        return _apg(qp, tol_abs, max_iter, tol_theta=tol_theta)
    raise ValueError(f"unknown inner method {method!r}")


def armijo_newton(spec: ProblemSpec, x, d, rho: float = 1e-4, beta: float = 0.5,
                  f_x: float | None = None, grad=None):
    """Smallest ``t`` with ``f(x + beta^t d) <= f(x) + rho beta^t <grad f(x), d>``."""
    if f_x is None:
        f_x = spec.loss.value(x)
    if grad is None:
        grad = spec.loss.gradient(x)
    slope = float(grad @ d)
    if not slope < 0:
        raise LineSearchError(f"not a descent direction (slope {slope!r})")
    step = 1.0
    for t in range(MAX_ARMIJO + 1):
        if spec.loss.value(x + step * d) <= f_x + rho * step * slope:
            return step, t
        step *= beta
    raise LineSearchError(f"Armijo search underflowed after {MAX_ARMIJO} reductions")


@dataclass
class NewtonStepResult:
    y: np.ndarray
    d: np.ndarray
    alpha_step: float
    t: int
    inner_iters: int
    theta_decrease: float
    residual_R: float
    tol_abs: float
    reg: float
    alpha_bound: float
    n_blocks: int
    qp: ReducedQP | None = field(default=None, repr=False)
    w: np.ndarray | None = field(default=None, repr=False)

    def certificate_ok(self) -> bool:
        return self.theta_decrease <= 0.0 and self.residual_R <= self.tol_abs


def inexact_tolerance(r_norm: float, mu_bar: float, varsigma: float) -> float:
    return 0.5 * min(1.0 / mu_bar, 1.0) * min(r_norm, r_norm ** (1.0 + varsigma))


def newton_step(spec: ProblemSpec, x, x_bar, mu_bar: float, f_x: float, grad, L1: float,
                *, sigma=0.5, varsigma=2 / 3, rho=1e-4, beta=0.5, b1=1e-3, b2=1.0,
                variant="G2", inner_solver="auto", inner_max_iter=10_000,
                keep_qp=False) -> NewtonStepResult:
    """One projected regularized Newton step from ``x`` on ``Pi(x)``."""
    x = np.asarray(x, dtype=float)
    r_norm = mu_bar * float(np.linalg.norm(x - x_bar))
    reg = r_norm ** sigma
    sup = supports(x)
    Gk = build_Gk(spec, x, reg, variant=variant, b1=b1, b2=b2, S=sup.S)
    blocks, qp = reduce_and_aggregate(spec, x, sup.T, sup.S, Gk, grad=grad)
    tol = inexact_tolerance(r_norm, mu_bar, varsigma)
    w, inner = solve_subproblem_inexact(qp, tol, max_iter=inner_max_iter, method=inner_solver)
    y = blocks.lift(w, x.size)
    d = y - x
    alpha_step, t = armijo_newton(spec, x, d, rho=rho, beta=beta, f_x=f_x, grad=grad)
    bound = min(1.0, (1.0 - rho) * b1 * beta / L1 * reg) if L1 > 0 else 1.0
    return NewtonStepResult(
        y=y, d=d, alpha_step=alpha_step, t=t, inner_iters=inner,
        theta_decrease=qp.theta_decrease(w), residual_R=qp.residual(w), tol_abs=tol,
        reg=reg, alpha_bound=bound, n_blocks=len(blocks),
        qp=qp if keep_qp else None, w=w if keep_qp else None)
