import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from fusedl0.cli import (
    EXIT_DIM,
    EXIT_FAIL,
    EXIT_MAXITER,
    EXIT_OK,
    EXIT_PARSE,
    main,
    verify_report,
)
from fusedl0.driver import SolverConfig
from fusedl0.io import read_json, read_matrix, read_vector_csv, write_matrix, write_vector_csv
from fusedl0.prox import ProxParams, fused_objective


def write_json(path, obj):
    path.write_text(json.dumps(obj))
    return str(path)


def test_prox_zero_input(tmp_path):
    z = tmp_path / "z.csv"
    write_vector_csv(z, np.zeros(5))
    assert main(["prox", "--z", str(z), "--out", str(tmp_path / "o")]) == EXIT_OK
    np.testing.assert_array_equal(read_vector_csv(tmp_path / "o" / "x.csv"), np.zeros(5))
    rep = read_json(tmp_path / "o" / "prox.json")
    assert rep["objective"] == 0.0
    assert rep["params"]["lam1"] == 1.0 and rep["params"]["lam2"] == 1.0


def test_prox_objective_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    zv = rng.normal(size=200)
    z = tmp_path / "z.csv"
    write_vector_csv(z, zv)
    cfg = write_json(tmp_path / "c.json", {"lam1": 0.3, "lam2": 0.1, "lower": -1.5,
                                           "upper": 1.5})
    assert main(["prox", "--z", str(z), "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
    x = read_vector_csv(tmp_path / "x.csv")
    rep = read_json(tmp_path / "prox.json")
    obj = fused_objective(x, read_vector_csv(z), ProxParams(0.3, 0.1, -1.5, 1.5))
    assert obj == pytest.approx(rep["objective"], rel=1e-10, abs=1e-10)


def test_malformed_csv_reports_line(tmp_path, capsys):
    z = tmp_path / "z.csv"
    z.write_text("1.0\n2.0\nabc\n")
    assert main(["prox", "--z", str(z), "--out", str(tmp_path)]) == EXIT_PARSE
    assert f"{z}:3" in capsys.readouterr().err


def test_header_line_is_skipped(tmp_path):
    z = tmp_path / "z.csv"
    z.write_text("z\n1.5\n\n-2\n")
    np.testing.assert_array_equal(read_vector_csv(z), [1.5, -2.0])


def test_bad_config_key(tmp_path):
    z = tmp_path / "z.csv"
    write_vector_csv(z, np.ones(3))
    cfg = write_json(tmp_path / "c.json", {"lambda": 1})
    assert main(["prox", "--z", str(z), "--config", cfg, "--out", str(tmp_path)]) == EXIT_PARSE


def test_dimension_mismatch(tmp_path):
    A = tmp_path / "A.csv"
    b = tmp_path / "b.csv"
    write_matrix(A, np.ones((4, 3)))
    write_vector_csv(b, np.ones(5))
    cfg = write_json(tmp_path / "c.json", {"lam1": 0.1, "lam2": 0.1})
    code = main(["solve", "--A", str(A), "--b", str(b), "--config", cfg,
                 "--out", str(tmp_path / "o")])
    assert code == EXIT_DIM
    z = tmp_path / "z.csv"
    write_vector_csv(z, np.ones(3))
    cfg = write_json(tmp_path / "c2.json", {"lower": [0, 0]})
    assert main(["prox", "--z", str(z), "--config", cfg, "--out", str(tmp_path)]) == EXIT_DIM


def solve(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["solve", "--kind", "sparse_regression", "--seed", "0", "--n", "60", "--m",
                 "40", "--out", str(out), *extra])
    return code, out


def test_solve_pg_and_pgipn_share_instance(tmp_path):
    c1, o1 = solve(tmp_path, "a", "--solver", "pg")
    c2, o2 = solve(tmp_path, "b", "--solver", "pgipn")
    assert c1 == c2 == EXIT_OK
    r1, r2 = read_json(o1 / "report.json"), read_json(o2 / "report.json")
    assert r1["instance"]["hash"] == r2["instance"]["hash"]
    assert r1["solver"] == "pg" and r2["solver"] == "pgipn"
    assert r2["results"]["newton_steps"] >= 1 and r1["results"]["newton_steps"] == 0
    # every config field is echoed, defaults included
    assert set(r2["config"]) == set(SolverConfig.field_names())
    assert r2["config"]["eps"] == 1e-4 and r2["config"]["b1"] == 1e-3
    with open(o2 / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) - 1 == r2["results"]["iters"] + 1
    assert read_matrix(o2 / "A.csv").shape == (40, 60)


def test_solve_config_override_echoed(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"eps": 1e-6, "switch": "relaxed"})
    code, out = solve(tmp_path, "o", "--config", cfg)
    assert code == EXIT_OK
    rep = read_json(out / "report.json")
    assert rep["config"]["eps"] == 1e-6 and rep["config"]["switch"] == "relaxed"
    assert rep["results"]["residual_inf"] <= 1e-6


def test_strict_max_iter(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"max_iter": 2})
    code, out = solve(tmp_path, "o", "--config", cfg, "--strict")
    assert code == EXIT_MAXITER
    assert read_json(out / "report.json")["results"]["status"] == "max_iter"
    assert solve(tmp_path, "p", "--config", cfg)[0] == EXIT_OK


@pytest.mark.parametrize("kind,extra", [
    ("sparse_regression", ["--n", "60", "--m", "40"]),
    ("deblur_1d", ["--n", "128"]),
    ("phoneme_like", ["--n", "30", "--m", "80"]),
])
def test_verify_passes_and_detects_tampering(tmp_path, kind, extra):
    out = tmp_path / "o"
    assert main(["solve", "--kind", kind, *extra, "--out", str(out)]) == EXIT_OK
    report = out / "report.json"
    assert main(["solve", "--verify", str(report)]) == EXIT_OK
    assert all(ok for _, _, ok in verify_report(report).values())
    x = read_vector_csv(out / "x.csv")
    x[0] += 0.5
    write_vector_csv(out / "x.csv", x)
    assert main(["solve", "--verify", str(report)]) == EXIT_FAIL


def test_solve_from_files(tmp_path):
    rng = np.random.default_rng(1)
    A = sp.random(30, 20, density=0.3, random_state=2, format="csr")
    write_matrix(tmp_path / "A.mtx", A)
    write_vector_csv(tmp_path / "b.csv", rng.normal(size=30))
    cfg = write_json(tmp_path / "c.json", {"lam1": 0.05, "lam2": 0.05, "lower": -1,
                                           "upper": 1, "loss": "student_t", "nu": 2.0})
    out = tmp_path / "o"
    assert main(["solve", "--A", str(tmp_path / "A.mtx"), "--b", str(tmp_path / "b.csv"),
                 "--config", cfg, "--out", str(out)]) == EXIT_OK
    rep = read_json(out / "report.json")
    assert rep["problem"]["loss"] == "student_t" and rep["problem"]["nu"] == 2.0
    assert "psnr" not in rep["results"]
    assert main(["solve", "--verify", str(out / "report.json")]) == EXIT_OK
    # lambdas are mandatory for file instances
    cfg = write_json(tmp_path / "c2.json", {"lam1": 0.05})
    assert main(["solve", "--A", str(tmp_path / "A.mtx"), "--b", str(tmp_path / "b.csv"),
                 "--config", cfg, "--out", str(out)]) == EXIT_PARSE


def read_bench(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_bench_table(tmp_path, monkeypatch):
    monkeypatch.setenv("FUSEDL0_THREADS", "1")
    args = ["bench", "--kind", "deblur_1d", "--n", "128"]
    assert main([*args, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert main([*args, "--out", str(tmp_path / "b")]) == EXIT_OK
    a, b = read_bench(tmp_path / "a" / "bench.csv"), read_bench(tmp_path / "b" / "bench.csv")
    assert len(a) == 10
    for solver in ("pg", "pgipn"):
        rows = [r for r in a if r["solver"] == solver]
        assert [int(r["seed"]) for r in rows] == [1, 2, 3, 4, 5]
    for r in a:
        if r["solver"] == "pg":
            assert r["Iter"].isdigit()
        else:
            head, _, tail = r["Iter"].partition("(")
            assert head.isdigit() and tail[:-1].isdigit() and tail.endswith(")")
    strip = [{k: v for k, v in r.items() if k != "Time"} for r in a]
    assert strip == [{k: v for k, v in r.items() if k != "Time"} for r in b]


def test_bench_parallel_matches_serial(tmp_path, monkeypatch):
    args = ["bench", "--kind", "sparse_regression", "--n", "60", "--m", "40", "--seed", "1", "2"]
    monkeypatch.setenv("FUSEDL0_THREADS", "1")
    assert main([*args, "--out", str(tmp_path / "s")]) == EXIT_OK
    monkeypatch.setenv("FUSEDL0_THREADS", "2")
    assert main([*args, "--out", str(tmp_path / "p")]) == EXIT_OK
    s, p = read_bench(tmp_path / "s" / "bench.csv"), read_bench(tmp_path / "p" / "bench.csv")
    for r in s + p:
        del r["Time"]
    assert s == p


def test_vector_and_matrix_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    v = rng.normal(size=50) * 10.0 ** rng.integers(-300, 300, 50)
    write_vector_csv(tmp_path / "v.csv", v)
    assert read_vector_csv(tmp_path / "v.csv").tobytes() == v.tobytes()
    M = rng.normal(size=(7, 5))
    write_matrix(tmp_path / "M.csv", M)
    assert read_matrix(tmp_path / "M.csv").tobytes() == M.tobytes()
    S = sp.random(9, 6, density=0.4, random_state=4, format="csr")
    write_matrix(tmp_path / "S.mtx", S)
    np.testing.assert_array_equal(read_matrix(tmp_path / "S.mtx").toarray(), S.toarray())


def test_module_entry_point(tmp_path):
    z = tmp_path / "z.csv"
    write_vector_csv(z, [1.0, 1.0, 1.0])
    proc = subprocess.run([sys.executable, "-m", "fusedl0", "prox", "--z", str(z),
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert "objective" in proc.stdout
