"""Hybrid PG / projected Newton outer loop, solver configuration and traces."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import time
from dataclasses import dataclass, field

import numpy as np

from .model import ProblemSpec, estimate_L1, eval_F
from .newton import (
    InnerSolverError,
    LineSearchError,
    check_relaxed_switch,
    check_switch,
    newton_step,
    supports,
)
from .pg import pg_step

TRACE_COLUMNS = ("k", "step_kind", "F", "residual_inf", "S_size", "T_size", "alpha",
                 "inner_iters", "t_ms")


@dataclass
class SolverConfig:
    """Parameters of the hybrid solver.

    ``stop_norm`` selects which residual is compared against ``eps``
    (``"inf"`` or ``"2"``).  ``mu_mode="fixed"`` uses ``mu_k = mu_factor*L1``;
    ``"interval"`` starts each step from ``clip(mu_prev/tau, mu_min, mu_max)``.
    """

    eps: float = 1e-4
    stop_norm: str = "inf"
    max_iter: int = 5000
    alpha: float = 1e-8
    sigma: float = 0.5
    rho: float = 1e-4
    beta: float = 0.5
    varsigma: float = 2.0 / 3.0
    b1: float = 1e-3
    b2: float = 1.0
    tau: float = 2.0
    mu_mode: str = "fixed"
    mu_factor: float = 1.0 / 0.95
    mu_min: float | None = None
    mu_max: float | None = None
    switch: str = "strict"
    eta1: float = 0.01
    eta2: float = 0.01
    G_variant: str = "G2"
    inner_solver: str = "auto"
    inner_max_iter: int = 10_000
    L1: float | None = None
    x0: list | None = None
    keep_certificates: bool = False

    def __post_init__(self):
        checks = [
            (self.eps >= 0, "eps must be >= 0"),
            (self.stop_norm in ("inf", "2"), "stop_norm must be 'inf' or '2'"),
            (int(self.max_iter) == self.max_iter and self.max_iter >= 0,
             "max_iter must be a nonnegative integer"),
            (self.alpha > 0, "alpha must be positive"),
            (0 < self.rho < 0.5, "rho must lie in (0, 1/2)"),
            # the recommended default sits on the boundary sigma = 1/2
            (0 < self.sigma <= 0.5, "sigma must lie in (0, 1/2]"),
            (self.sigma < self.varsigma <= 1, "varsigma must lie in (sigma, 1]"),
            (0 < self.beta < 1, "beta must lie in (0, 1)"),
            (self.tau > 1, "tau must exceed 1"),
            (self.b1 > 0, "b1 must be positive"),
            (self.b2 >= 1, "b2 must be >= 1"),
            (self.mu_mode in ("fixed", "interval"), "mu_mode must be 'fixed' or 'interval'"),
            (self.mu_factor > 0, "mu_factor must be positive"),
            (self.switch in ("strict", "relaxed"), "switch must be 'strict' or 'relaxed'"),
            (self.eta1 >= 0 and self.eta2 >= 0, "eta1 and eta2 must be >= 0"),
            (self.G_variant in ("G1", "G2", "G3"), "G_variant must be G1, G2 or G3"),
            (self.inner_solver in ("auto", "newton", "apg"), "unknown inner_solver"),
            (self.L1 is None or self.L1 >= 0, "L1 must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.max_iter = int(self.max_iter)
        if self.mu_mode == "interval":
            if self.mu_min is None or self.mu_max is None or not 0 < self.mu_min <= self.mu_max:
                raise ValueError("interval mode needs 0 < mu_min <= mu_max")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in dataclasses.fields(cls)]

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        unknown = set(d) - set(cls.field_names())
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["x0"] is not None:
            d["x0"] = [float(v) for v in np.asarray(d["x0"], dtype=float)]
        return d


@dataclass
class IterRecord:
    k: int
    step_kind: str = "stop"
    F: float = np.nan
    residual: float = np.nan
    residual_inf: float = np.nan
    S_size: int = 0
    T_size: int = 0
    mu0: float = np.nan
    mu_bar: float = np.nan
    alpha_step: float = np.nan
    inner_iters: int = 0
    t_ms: float = 0.0
    m_backtrack: int = 0
    switch_passed: bool = False
    fallback: str = ""
    theta_decrease: float = np.nan
    residual_R: float = np.nan
    tol_abs: float = np.nan
    alpha_bound: float = np.nan
    n_blocks: int = 0
    support_digest: str = ""


def support_digest(x) -> str:
    """Short fingerprint of ``(supp(x), supp(Bx))`` for cheap equality tests."""
    x = np.asarray(x)
    bits = np.packbits(np.concatenate((x != 0, x[1:] != x[:-1])))
    return hashlib.blake2b(bits.tobytes(), digest_size=8).hexdigest()


@dataclass
class SolveTrace:
    """Per-iteration records (``k = 0..iters``) and the final state.

    ``step_kind`` of record ``k`` describes how ``x^{k+1}`` was produced; the
    last record has kind ``"stop"``.
    """

    records: list[IterRecord] = field(default_factory=list)
    status: str = "running"
    x: np.ndarray | None = None
    F: float = np.nan
    residual: float = np.nan
    residual_inf: float = np.nan
    total_time: float = 0.0
    newton_time: float = 0.0
    L1: float = np.nan
    certificates: list = field(default_factory=list, repr=False)

    @property
    def iters(self) -> int:
        return len(self.records) - 1

    @property
    def pg_steps(self) -> int:
        return sum(r.step_kind == "PG" for r in self.records)

    @property
    def newton_steps(self) -> int:
        return sum(r.step_kind == "Newton" for r in self.records)

    @property
    def xNnz(self) -> int:
        return int(np.count_nonzero(self.x))

    @property
    def BxNnz(self) -> int:
        return int(np.count_nonzero(self.x[1:] != self.x[:-1]))

    @property
    def iter_label(self) -> str:
        """``total(newton)`` when Newton steps were taken, else ``total``."""
        if self.newton_steps:
            return f"{self.iters}({self.newton_steps})"
        return str(self.iters)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.k, r.step_kind, f"{r.F:.17g}", f"{r.residual_inf:.17g}",
                            r.S_size, r.T_size, f"{r.alpha_step:.17g}", r.inner_iters,
                            f"{r.t_ms:.17g}"])


def psnr(x, x_true) -> float:
    """``10*log10(n / ||x_true - x||^2)``; ``inf`` on an exact match."""
    x = np.asarray(x, dtype=float)
    x_true = np.asarray(x_true, dtype=float)
    if x.shape != x_true.shape:
        raise ValueError("x and x_true differ in length")
    err = float(np.sum((x_true - x) ** 2))
    if err == 0.0:
        return np.inf
    return 10.0 * np.log10(x.size / err)


def _solve(spec: ProblemSpec, config: SolverConfig, newton: bool = True) -> SolveTrace:
    cfg = config
    n = spec.n
    x = np.zeros(n) if cfg.x0 is None else np.array(cfg.x0, dtype=float)
    if x.shape != (n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({n},)")
    if not spec.feasible(x):
        raise ValueError("x0 is infeasible")
    L1 = estimate_L1(spec) if cfg.L1 is None else float(cfg.L1)
    if cfg.mu_mode == "fixed":
        # a zero Lipschitz estimate (e.g. A = 0) still needs a positive prox weight
        mu_k = cfg.mu_factor * L1 if L1 > 0 else 1.0
    else:
        mu_k = cfg.mu_min
    switch = (check_switch if cfg.switch == "strict"
              else lambda a, b, k: check_relaxed_switch(a, b, max(k, 1), cfg.eta1, cfg.eta2))

    trace = SolveTrace(L1=L1)
    t_start = time.perf_counter()
    f_x, grad = spec.loss.value_and_gradient(x)
    F_x = f_x + spec.g(x)
    k = 0
    while True:
        t_iter = time.perf_counter()
        sup = supports(x)
        rec = IterRecord(k=k, F=F_x, S_size=sup.S.size, T_size=sup.T.size, mu0=mu_k,
                         support_digest=support_digest(x))
        trace.records.append(rec)
        pg = pg_step(spec, x, mu_k, tau=cfg.tau, alpha=cfg.alpha, F_x=F_x, grad=grad)
        rec.residual, rec.residual_inf, rec.mu_bar, rec.m_backtrack = (
            pg.residual, pg.residual_inf, pg.mu_bar, pg.m)
        res = pg.residual_inf if cfg.stop_norm == "inf" else pg.residual
        if res <= cfg.eps:
            trace.status = "converged"
            rec.t_ms = 1e3 * (time.perf_counter() - t_iter)
            break
        if k >= cfg.max_iter:
            trace.status = "max_iter"
            rec.t_ms = 1e3 * (time.perf_counter() - t_iter)
            break

        x_new = None
        if newton:
            if cfg.switch == "strict":
                rec.switch_passed = check_switch(x, pg.x_bar)
            else:
                rec.switch_passed = switch(x, pg.x_bar, k)
        if rec.switch_passed:
            t_newton = time.perf_counter()
            try:
                ns = newton_step(
                    spec, x, pg.x_bar, pg.mu_bar, f_x, grad, L1,
                    sigma=cfg.sigma, varsigma=cfg.varsigma, rho=cfg.rho, beta=cfg.beta,
                    b1=cfg.b1, b2=cfg.b2, variant=cfg.G_variant,
                    inner_solver=cfg.inner_solver, inner_max_iter=cfg.inner_max_iter,
                    keep_qp=cfg.keep_certificates)
            except (InnerSolverError, LineSearchError) as exc:
                rec.fallback = type(exc).__name__
            else:
                cand = x + ns.alpha_step * ns.d
                F_cand = eval_F(spec, cand)
                if F_cand < F_x:
                    x_new, F_new = cand, F_cand
                    rec.step_kind = "Newton"
                    rec.alpha_step = ns.alpha_step
                    rec.inner_iters = ns.inner_iters
                    rec.theta_decrease = ns.theta_decrease
                    rec.residual_R = ns.residual_R
                    rec.tol_abs = ns.tol_abs
                    rec.alpha_bound = ns.alpha_bound
                    rec.n_blocks = ns.n_blocks
                    if cfg.keep_certificates:
                        trace.certificates.append((k, ns.qp, ns.w, ns.tol_abs))
                else:
                    rec.fallback = "no_decrease"
            trace.newton_time += time.perf_counter() - t_newton
        if x_new is None:
            x_new, F_new = pg.x_bar, pg.F_bar
            rec.step_kind = "PG"
            rec.alpha_step = 1.0
        x, F_x = x_new, F_new
        f_x, grad = spec.loss.value_and_gradient(x)
        if cfg.mu_mode == "interval":
            mu_k = min(max(pg.mu_bar / cfg.tau, cfg.mu_min), cfg.mu_max)
        rec.t_ms = 1e3 * (time.perf_counter() - t_iter)
        k += 1

    trace.x = x
    trace.F = F_x
    trace.residual = trace.records[-1].residual
    trace.residual_inf = trace.records[-1].residual_inf
    trace.total_time = time.perf_counter() - t_start
    return trace


def pgipn_solve(spec: ProblemSpec, config: SolverConfig | None = None) -> SolveTrace:
    """Hybrid proximal gradient / inexact projected regularized Newton solver."""
    return _solve(spec, SolverConfig() if config is None else config, newton=True)
