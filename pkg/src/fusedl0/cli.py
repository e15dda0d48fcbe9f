"""Command line entry point: ``prox``, ``solve`` and ``bench`` subcommands."""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .benchmarks import KINDS, generate_benchmarks
from .driver import SolverConfig, pgipn_solve, psnr
from .io import (
    ParseError,
    as_float,
    instance_hash,
    read_json,
    read_matrix,
    read_vector_csv,
    write_json,
    write_matrix,
    write_vector_csv,
)
from .model import LeastSquares, ProblemSpec, StudentT, eval_F
from .pg import pg_solve, pg_step
from .prox import ProxParams, prox_fused_l0

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_PARSE = 2
EXIT_DIM = 3
EXIT_MAXITER = 4

PROBLEM_KEYS = ("loss", "nu", "lam1", "lam2", "lower", "upper")
PROX_KEYS = ("lam1", "lam2", "lower", "upper")
VERIFY_RTOL = 1e-9
STRING_FIELDS = ("stop_norm", "mu_mode", "switch", "G_variant", "inner_solver")


class DimensionError(ValueError):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FUSEDL0_THREADS", "1")))
    except ValueError:
        return 1


def _bound(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(as_float(v), dtype=float)
    if v.ndim == 0:
        return np.full(n, float(v))
    if v.shape != (n,):
        raise DimensionError(f"{name} has length {v.size}, expected {n}")
    return v


def _load_config(path) -> dict:
    if path is None:
        return {}
    cfg = read_json(path)
    if not isinstance(cfg, dict):
        raise ParseError(path, None, "config must be a JSON object")
    return cfg


def _split_config(raw: dict):
    """Separate problem keys from solver keys and substitute defaults."""
    problem = {k: raw[k] for k in PROBLEM_KEYS if k in raw}
    return problem, _solver_config({k: v for k, v in raw.items() if k not in PROBLEM_KEYS})


def _solver_config(d: dict) -> SolverConfig:
    return SolverConfig.from_dict({k: v if k in STRING_FIELDS else as_float(v)
                                   for k, v in d.items()})


def _build_spec(A, b, problem: dict, meta: dict | None = None) -> ProblemSpec:
    n = A.shape[1]
    if A.shape[0] != b.size:
        raise DimensionError(f"A has {A.shape[0]} rows but b has length {b.size}")
    kind = problem.get("loss", "least_squares")
    if kind == "least_squares":
        loss = LeastSquares(A, b)
    elif kind == "student_t":
        loss = StudentT(A, b, nu=float(problem.get("nu", 1.0)))
    else:
        raise ValueError(f"unknown loss {kind!r}")
    params = ProxParams(float(problem["lam1"]), float(problem["lam2"]),
                        _bound(problem.get("lower", -np.inf), n, "lower"),
                        _bound(problem.get("upper", np.inf), n, "upper"))
    return ProblemSpec(loss, params, meta=dict(meta or {}))


def _problem_echo(spec: ProblemSpec) -> dict:
    lo, hi = spec.lower, spec.upper
    return {
        "loss": spec.loss.kind,
        "nu": getattr(spec.loss, "nu", None),
        "lam1": spec.params.lam1,
        "lam2": spec.params.lam2,
        "lower": float(lo[0]) if np.all(lo == lo[0]) else lo,
        "upper": float(hi[0]) if np.all(hi == hi[0]) else hi,
    }


def _run(spec, config, solver: str):
    return (pg_solve if solver == "pg" else pgipn_solve)(spec, config)


def _results(trace, spec, x_true=None) -> dict:
    out = {
        "status": trace.status,
        "iters": trace.iters,
        "iter_label": trace.iter_label,
        "pg_steps": trace.pg_steps,
        "newton_steps": trace.newton_steps,
        "time_total_ms": 1e3 * trace.total_time,
        "time_newton_ms": 1e3 * trace.newton_time,
        "Fval": trace.F,
        "xNnz": trace.xNnz,
        "BxNnz": trace.BxNnz,
        "residual": trace.residual,
        "residual_inf": trace.residual_inf,
        "L1": trace.L1,
        "mu0_final": trace.records[-1].mu0,
    }
    if x_true is not None:
        out["psnr"] = psnr(trace.x, x_true)
    return out


def cmd_prox(args) -> int:
    z = read_vector_csv(args.z)
    if z.size == 0:
        raise ParseError(args.z, None, "empty vector")
    raw = _load_config(args.config)
    unknown = set(raw) - set(PROX_KEYS)
    if unknown:
        raise ValueError(f"unknown prox config keys: {sorted(unknown)}")
    n = z.size
    params = ProxParams(float(raw.get("lam1", 1.0)), float(raw.get("lam2", 1.0)),
                        _bound(raw.get("lower", -np.inf), n, "lower"),
                        _bound(raw.get("upper", np.inf), n, "upper"))
    t0 = time.perf_counter()
    res = prox_fused_l0(z, params)
    wall = 1e3 * (time.perf_counter() - t0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_vector_csv(out / "x.csv", res.x)
    write_json(out / "prox.json", {
        "params": {"lam1": params.lam1, "lam2": params.lam2,
                   "lower": raw.get("lower", -np.inf), "upper": raw.get("upper", np.inf)},
        "z_path": str(Path(args.z).resolve()),
        "x_path": str((out / "x.csv").resolve()),
        "objective": res.objective,
        "blocks": [[s, e, v] for s, e, v in res.blocks],
        "n_pieces_max": res.n_pieces_max,
        "wall_time_ms": wall,
    })
    print(f"objective {res.objective:.17g}  blocks {len(res.blocks)}  -> {out}")
    return EXIT_OK


def _instance_from_args(args, problem: dict):
    """Either read ``--A/--b`` or generate ``--kind``; returns ``(spec, x_true, descriptor)``."""
    if args.kind is not None:
        sizes = {k: v for k, v in (("n", args.n), ("m", args.m), ("noise", args.noise))
                 if v is not None}
        for key in ("lam1", "lam2"):
            if key in problem:
                sizes[key] = float(problem[key])
        spec, x_true = generate_benchmarks(args.kind, args.seed, **sizes)
        if not spec.meta.get("has_truth", True):
            x_true = None
        return spec, x_true, dict(spec.meta)
    if args.A is None or args.b is None:
        raise ValueError("give either --A and --b or --kind")
    A = read_matrix(args.A)
    b = read_vector_csv(args.b)
    if "lam1" not in problem or "lam2" not in problem:
        raise ValueError("config must set lam1 and lam2 for file instances")
    spec = _build_spec(A, b, problem)
    return spec, None, {"A_source": str(Path(args.A).resolve()),
                        "b_source": str(Path(args.b).resolve())}


def cmd_solve(args) -> int:
    if args.verify is not None:
        return cmd_verify(args.verify)
    if args.out is None:
        raise ValueError("--out is required")
    raw = _load_config(args.config)
    problem, config = _split_config(raw)
    spec, x_true, desc = _instance_from_args(args, problem)
    if config.x0 is not None and len(config.x0) != spec.n:
        raise DimensionError(f"x0 has length {len(config.x0)}, expected {spec.n}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    A_path = out / ("A.mtx" if not isinstance(spec.loss.A, np.ndarray) else "A.csv")
    write_matrix(A_path, spec.loss.A)
    write_vector_csv(out / "b.csv", spec.loss.b)
    if x_true is not None:
        write_vector_csv(out / "x_true.csv", x_true)
    trace = _run(spec, config, args.solver)
    write_vector_csv(out / "x.csv", trace.x)
    trace.write_csv(out / "trace.csv")
    m, n = spec.loss.A.shape
    report = {
        "solver": args.solver,
        "config": config.to_dict(),
        "problem": _problem_echo(spec),
        "instance": {"m": m, "n": n, **desc, "hash": instance_hash(spec),
                     "A_path": str(A_path.resolve()),
                     "b_path": str((out / "b.csv").resolve()),
                     "x_true_path": str((out / "x_true.csv").resolve()) if x_true is not None
                     else None},
        "results": _results(trace, spec, x_true),
        "x_path": str((out / "x.csv").resolve()),
        "trace_path": str((out / "trace.csv").resolve()),
    }
    write_json(out / "report.json", report)
    r = report["results"]
    print(f"{args.solver}: {r['status']}  iters {r['iter_label']}  F {r['Fval']:.10g}  "
          f"residual_inf {r['residual_inf']:.3e}  -> {out / 'report.json'}")
    if args.strict and trace.status == "max_iter":
        return EXIT_MAXITER
    return EXIT_OK


def verify_report(path) -> dict:
    """Recompute the reported quantities from the dumped artifacts.

    Returns a mapping ``name -> (reported, recomputed, ok)``.
    """
    rep = read_json(path)
    inst = rep["instance"]
    problem = {k: as_float(v) for k, v in rep["problem"].items()}
    A = read_matrix(inst["A_path"])
    b = read_vector_csv(inst["b_path"])
    spec = _build_spec(A, b, problem)
    x = read_vector_csv(rep["x_path"])
    if x.size != spec.n:
        raise DimensionError(f"x has length {x.size}, expected {spec.n}")
    cfg = _solver_config(rep["config"])
    res = {k: as_float(v) for k, v in rep["results"].items()}
    pg = pg_step(spec, x, float(res["mu0_final"]), tau=cfg.tau, alpha=cfg.alpha)
    recomputed = {
        "Fval": eval_F(spec, x),
        "residual_inf": pg.residual_inf,
        "xNnz": int(np.count_nonzero(x)),
        "BxNnz": int(np.count_nonzero(x[1:] != x[:-1])),
        "hash": instance_hash(spec),
    }
    if inst.get("x_true_path"):
        recomputed["psnr"] = psnr(x, read_vector_csv(inst["x_true_path"]))
    out = {}
    for key, val in recomputed.items():
        rv = inst["hash"] if key == "hash" else res[key]
        if isinstance(val, str):
            ok = rv == val
        elif np.isinf(val) or np.isinf(rv):
            ok = val == rv
        else:
            ok = abs(float(rv) - float(val)) <= VERIFY_RTOL * max(1.0, abs(float(val)))
        out[key] = (rv, val, bool(ok))
    return out


def cmd_verify(path) -> int:
    checks = verify_report(path)
    bad = False
    for key, (rv, val, ok) in checks.items():
        print(f"{'ok  ' if ok else 'FAIL'} {key}: reported {rv} recomputed {val}")
        bad |= not ok
    return EXIT_FAIL if bad else EXIT_OK


BENCH_COLUMNS = ("solver", "seed", "Iter", "Time", "Fval", "xNnz", "BxNnz", "PSNR", "status",
                 "residual_inf")


def _bench_one(job):
    kind, seed, sizes, raw_cfg, solver = job
    problem, config = _split_config(raw_cfg)
    for key in ("lam1", "lam2"):
        if key in problem:
            sizes = {**sizes, key: float(problem[key])}
    spec, x_true = generate_benchmarks(kind, seed, **sizes)
    trace = _run(spec, config, solver)
    has_truth = spec.meta.get("has_truth", True)
    return {
        "solver": solver, "seed": seed, "Iter": trace.iter_label, "Time": trace.total_time,
        "Fval": trace.F, "xNnz": trace.xNnz, "BxNnz": trace.BxNnz,
        "PSNR": psnr(trace.x, x_true) if has_truth else np.nan,
        "status": trace.status, "residual_inf": trace.residual_inf,
        "hash": instance_hash(spec),
    }


def cmd_bench(args) -> int:
    raw = _load_config(args.config)
    _split_config(raw)
    sizes = {k: v for k, v in (("n", args.n), ("m", args.m), ("noise", args.noise))
             if v is not None}
    jobs = [(args.kind, seed, sizes, raw, solver) for solver in args.solver for seed in args.seed]
    workers = min(_threads(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_bench_one, jobs))
    else:
        rows = [_bench_one(j) for j in jobs]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(BENCH_COLUMNS)
        for r in rows:
            w.writerow([r["solver"], r["seed"], r["Iter"], f"{r['Time']:.6g}",
                        f"{r['Fval']:.17g}", r["xNnz"], r["BxNnz"], f"{r['PSNR']:.17g}",
                        r["status"], f"{r['residual_inf']:.17g}"])
    write_json(out / "bench.json", {"kind": args.kind, "sizes": sizes, "config": raw,
                                    "rows": rows})
    print(f"{'solver':8s} {'seed':>4s} {'Iter':>10s} {'Time':>9s} {'Fval':>14s} "
          f"{'xNnz':>6s} {'BxNnz':>6s} {'PSNR':>7s}")
    for r in rows:
        print(f"{r['solver']:8s} {r['seed']:4d} {r['Iter']:>10s} {r['Time']:9.3f} "
              f"{r['Fval']:14.8g} {r['xNnz']:6d} {r['BxNnz']:6d} {r['PSNR']:7.2f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fusedl0", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    q = sub.add_parser("prox", help="exact prox of the fused l0 regularizer")
    q.add_argument("--z", required=True, help="one-column CSV prox center")
    q.add_argument("--config", help="JSON with lam1, lam2, lower, upper")
    q.add_argument("--out", required=True, help="output directory")
    q.set_defaults(func=cmd_prox)

    def instance_flags(sp_):
        sp_.add_argument("--kind", choices=KINDS, help="generate a synthetic instance")
        sp_.add_argument("--n", type=int)
        sp_.add_argument("--m", type=int)
        sp_.add_argument("--noise", type=float)

    s = sub.add_parser("solve", help="solve one instance with PG or PGiPN")
    s.add_argument("--solver", choices=("pg", "pgipn"), default="pgipn")
    s.add_argument("--A", help="design matrix (.mtx or dense .csv)")
    s.add_argument("--b", help="one-column CSV right-hand side")
    s.add_argument("--config", help="JSON: SolverConfig fields plus loss, nu, lam1, lam2, "
                                    "lower, upper")
    s.add_argument("--out", help="output directory")
    s.add_argument("--seed", type=int, default=0)
    instance_flags(s)
    s.add_argument("--strict", action="store_true", help="exit 4 if max_iter is reached")
    s.add_argument("--verify", metavar="REPORT", help="recompute a report from its artifacts")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="compare solvers over seeds on a synthetic family")
    b.add_argument("--kind", choices=KINDS, required=True)
    b.add_argument("--seed", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    b.add_argument("--solver", choices=("pg", "pgipn"), nargs="+", default=["pgipn", "pg"])
    b.add_argument("--n", type=int)
    b.add_argument("--m", type=int)
    b.add_argument("--noise", type=float)
    b.add_argument("--config", help="JSON config shared by all runs")
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except DimensionError as exc:
        print(f"dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_DIM
    except (ValueError, TypeError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE


if __name__ == "__main__":
    sys.exit(main())
