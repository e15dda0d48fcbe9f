"""File formats: one-column CSV vectors, CSV or Matrix Market matrices, JSON documents."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp


class ParseError(ValueError):
    """Malformed input; ``line`` is 1-based when known."""

    def __init__(self, path, line: int | None, msg: str):
        self.path = str(path)
        self.line = line
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")


def fmt(v: float) -> str:
    return f"{float(v):.17g}"


def read_vector_csv(path) -> np.ndarray:
    """Read one number per line; blank lines are skipped, a non-numeric first line is a header."""
    vals = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 1:
                raise ParseError(path, lineno, f"expected one column, found {len(row)}")
            try:
                vals.append(float(row[0]))
            except ValueError:
                if lineno == 1 and not vals:
                    continue
                raise ParseError(path, lineno, f"not a number: {row[0]!r}") from None
    return np.array(vals, dtype=float)


def write_vector_csv(path, x) -> None:
    with open(path, "w") as fh:
        for v in np.asarray(x, dtype=float).ravel():
            fh.write(fmt(v) + "\n")


def read_matrix(path):
    """Matrix Market (``.mtx``) as CSR, anything else as a dense comma separated table."""
    path = Path(path)
    if path.suffix == ".mtx":
        try:
            M = scipy.io.mmread(str(path))
        except Exception as exc:
            raise ParseError(path, None, f"bad Matrix Market file ({exc})") from None
        return sp.csr_matrix(M) if sp.issparse(M) else np.asarray(M, dtype=float)
    rows = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise ParseError(path, lineno, "non-numeric entry") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise ParseError(path, lineno, f"expected {width} columns, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise ParseError(path, None, "empty matrix")
    return np.array(rows, dtype=float)


def write_matrix(path, A) -> None:
    path = Path(path)
    if path.suffix == ".mtx":
        scipy.io.mmwrite(str(path), sp.coo_matrix(A), precision=17)
        return
    np.savetxt(path, np.asarray(A, dtype=float), delimiter=",", fmt="%.17g")


def _encode(obj):
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_encode(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def _decode_float(v):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_encode(obj), fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(path, exc.lineno, exc.msg) from None


def as_float(v):
    """Undo the string encoding of non-finite numbers (also inside lists)."""
    if isinstance(v, list):
        return [as_float(u) for u in v]
    return _decode_float(v)


def instance_hash(spec) -> str:
    """SHA-256 over the data, penalties, box and loss of a problem."""
    h = hashlib.sha256()
    loss = spec.loss
    h.update(loss.kind.encode())
    h.update(repr(getattr(loss, "nu", None)).encode())
    A = loss.A
    if sp.issparse(A):
        A = sp.csr_matrix(A)
        A.sort_indices()
        for arr in (np.asarray(A.shape), A.indptr, A.indices, A.data):
            h.update(np.ascontiguousarray(arr).tobytes())
    else:
        h.update(np.asarray(A.shape).tobytes())
        h.update(np.ascontiguousarray(A, dtype=float).tobytes())
    h.update(np.ascontiguousarray(loss.b).tobytes())
    h.update(np.array([spec.params.lam1, spec.params.lam2]).tobytes())
    h.update(np.ascontiguousarray(spec.lower).tobytes())
    h.update(np.ascontiguousarray(spec.upper).tobytes())
    return h.hexdigest()
