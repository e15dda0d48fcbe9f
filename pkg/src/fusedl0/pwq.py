"""
One-dimensional piecewise linear-quadratic functions with provenance tags.

A function is stored as a list of closed pieces ``[lo, hi]`` carrying the
coefficients of ``a*t**2 + b*t + c`` and an integer tag.  Its value at ``t``
is the minimum over all pieces whose interval contains ``t`` and ``+inf``
when no piece covers ``t``.  Pieces may overlap (the jump of the l0 term at
the origin is encoded by an overlapping singleton), which keeps the induced
function lower semicontinuous without half-open interval bookkeeping.

The heavy lifting lives in the ``_*`` kernels below.  They operate on six
parallel arrays and are compiled with numba so that the dynamic program in
:mod:`fusedl0.prox` can call them in a tight loop; the
:class:`PiecewiseQuadratic` class is a thin immutable wrapper over the same
kernels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

# Roots closer than this (relative) to an interval endpoint snap onto it.
SNAP_RTOL = 1e-12
# Non-degenerate keep regions narrower than this are dropped.
MIN_WIDTH = 1e-14
# Coefficient agreement required before two touching pieces merge.
MERGE_TOL = 1e-12


@njit(cache=True)
def _piece_value(a, b, c, t):
    return (a * t + b) * t + c


@njit(cache=True)
def _eval(lo, hi, a, b, c, tag, t):
    best = np.inf
    best_tag = -1
    for k in range(lo.size):
        if lo[k] <= t <= hi[k]:
            v = _piece_value(a[k], b[k], c[k], t)
            if v < best or (v == best and tag[k] < best_tag):
                best = v
                best_tag = tag[k]
    return best, best_tag


@njit(cache=True)
def _global_min(lo, hi, a, b, c, tag):
    best_v = np.inf
    best_t = np.inf
    best_tag = -1
    for k in range(lo.size):
        cand = np.empty(3)
        nc = 0
        if lo[k] == hi[k]:
            cand[0] = lo[k]
            nc = 1
        else:
            if np.isfinite(lo[k]):
                cand[nc] = lo[k]
                nc += 1
            if np.isfinite(hi[k]):
                cand[nc] = hi[k]
                nc += 1
            if a[k] > 0.0:
                v = -b[k] / (2.0 * a[k])
                cand[nc] = min(max(v, lo[k]), hi[k])
                nc += 1
            elif nc == 0:
                # constant on the whole line
                cand[0] = 0.0
                nc = 1
        for j in range(nc):
            t = cand[j]
            v = _piece_value(a[k], b[k], c[k], t)
            if (v < best_v or (v == best_v and t < best_t)
                    or (v == best_v and t == best_t and tag[k] < best_tag)):
                best_v = v
                best_t = t
                best_tag = tag[k]
    return best_t, best_v, best_tag


@njit(cache=True)
def _sort_and_merge(lo, hi, a, b, c, tag):
    order = np.argsort(lo, kind="mergesort")
    n = order.size
    olo = np.empty(n)
    ohi = np.empty(n)
    oa = np.empty(n)
    ob = np.empty(n)
    oc = np.empty(n)
    otag = np.empty(n, dtype=np.int64)
    m = 0
    for idx in range(n):
        k = order[idx]
        if m > 0:
            p = m - 1
            if (ohi[p] == lo[k] and olo[p] < ohi[p] and lo[k] < hi[k]
                    and otag[p] == tag[k]
                    and abs(oa[p] - a[k]) <= MERGE_TOL * (1.0 + abs(a[k]))
                    and abs(ob[p] - b[k]) <= MERGE_TOL * (1.0 + abs(b[k]))
                    and abs(oc[p] - c[k]) <= MERGE_TOL * (1.0 + abs(c[k]))):
                ohi[p] = hi[k]
                continue
        olo[m] = lo[k]
        ohi[m] = hi[k]
        oa[m] = a[k]
        ob[m] = b[k]
        oc[m] = c[k]
        otag[m] = tag[k]
        m += 1
    return olo[:m], ohi[:m], oa[:m], ob[:m], oc[:m], otag[:m]


@njit(cache=True)
def _add_quadratic(lo, hi, a, b, c, tag, qa, qb, qc):
    return lo.copy(), hi.copy(), a + qa, b + qb, c + qc, tag.copy()


@njit(cache=True)
def _add_l0_box(lo, hi, a, b, c, tag, lam2, blo, bhi):
    f0 = np.inf
    t0 = -1
    if lam2 > 0.0 and blo <= 0.0 <= bhi:
        f0, t0 = _eval(lo, hi, a, b, c, tag, 0.0)
    n = lo.size
    olo = np.empty(n + 1)
    ohi = np.empty(n + 1)
    oa = np.empty(n + 1)
    ob = np.empty(n + 1)
    oc = np.empty(n + 1)
    otag = np.empty(n + 1, dtype=np.int64)
    m = 0
    for k in range(n):
        nlo = max(lo[k], blo)
        nhi = min(hi[k], bhi)
        if nlo > nhi:
            continue
        if lam2 > 0.0 and nlo == 0.0 and nhi == 0.0 and np.isfinite(f0):
            # an old value at the origin; superseded by the new singleton
            continue
        olo[m] = nlo
        ohi[m] = nhi
        oa[m] = a[k]
        ob[m] = b[k]
        oc[m] = c[k] + lam2
        otag[m] = tag[k]
        m += 1
    if np.isfinite(f0):
        olo[m] = 0.0
        ohi[m] = 0.0
        oa[m] = 0.0
        ob[m] = 0.0
        oc[m] = f0
        otag[m] = t0
        m += 1
    return _sort_and_merge(olo[:m], ohi[:m], oa[:m], ob[:m], oc[:m], otag[:m])


@njit(cache=True)
def _snap(r, lo, hi):
    if np.isfinite(lo) and abs(r - lo) <= SNAP_RTOL * max(1.0, abs(lo)):
        return lo
    if np.isfinite(hi) and abs(r - hi) <= SNAP_RTOL * max(1.0, abs(hi)):
        return hi
    return r


@njit(cache=True)
def _keep_regions(lo, hi, qa, qb, qc):
    """Sub-intervals of [lo, hi] where qa*t^2 + qb*t + qc <= 0 (at most two)."""
    out = np.empty((2, 2))
    nk = 0
    if lo == hi:
        if _piece_value(qa, qb, qc, lo) <= 0.0:
            out[0, 0] = lo
            out[0, 1] = hi
            nk = 1
        return out, nk
    if qa == 0.0:
        if qb == 0.0:
            if qc <= 0.0:
                out[0, 0] = lo
                out[0, 1] = hi
                nk = 1
            return out, nk
        r = _snap(-qc / qb, lo, hi)
        if qb > 0.0:
            klo, khi = lo, min(hi, r)
        else:
            klo, khi = max(lo, r), hi
        if klo <= khi:
            out[0, 0] = klo
            out[0, 1] = khi
            nk = 1
        return out, nk
    disc = qb * qb - 4.0 * qa * qc
    if disc < 0.0:
        if qa < 0.0:
            out[0, 0] = lo
            out[0, 1] = hi
            nk = 1
        return out, nk
    sq = np.sqrt(disc)
    if qb >= 0.0:
        q = -0.5 * (qb + sq)
    else:
        q = -0.5 * (qb - sq)
    if q == 0.0:
        r1 = 0.0
        r2 = 0.0
    else:
        r1 = q / qa
        r2 = qc / q
    if r1 > r2:
        r1, r2 = r2, r1
    r1 = _snap(r1, lo, hi)
    r2 = _snap(r2, lo, hi)
    if qa > 0.0:
        klo = max(lo, r1)
        khi = min(hi, r2)
        if klo <= khi:
            out[0, 0] = klo
            out[0, 1] = khi
            nk = 1
    else:
        if lo <= r1:
            out[nk, 0] = lo
            out[nk, 1] = min(hi, r1)
            nk += 1
        if r2 <= hi:
            out[nk, 0] = max(lo, r2)
            out[nk, 1] = hi
            nk += 1
    return out, nk


@njit(cache=True)
def _min_with_constant(lo, hi, a, b, c, tag, cst, tag_new):
    n = lo.size
    cap = 3 * n + 1
    olo = np.empty(cap)
    ohi = np.empty(cap)
    oa = np.empty(cap)
    ob = np.empty(cap)
    oc = np.empty(cap)
    otag = np.empty(cap, dtype=np.int64)
    # non-degenerate keep intervals, used to carve out the constant branch
    klo = np.empty(2 * n)
    khi = np.empty(2 * n)
    nkeep = 0
    m = 0
    for k in range(n):
        regions, nr = _keep_regions(lo[k], hi[k], a[k], b[k], c[k] - cst)
        for j in range(nr):
            rlo = regions[j, 0]
            rhi = regions[j, 1]
            degenerate = rlo == rhi
            whole = rlo == lo[k] and rhi == hi[k]
            if lo[k] < hi[k] and rhi - rlo < MIN_WIDTH and not whole:
                # a sliver left by root finding; the constant is within
                # rounding of the piece there
                continue
            olo[m] = rlo
            ohi[m] = rhi
            oa[m] = a[k]
            ob[m] = b[k]
            oc[m] = c[k]
            otag[m] = tag[k]
            m += 1
            if not degenerate:
                klo[nkeep] = rlo
                khi[nkeep] = rhi
                nkeep += 1
    order = np.argsort(klo[:nkeep], kind="mergesort")
    cur = -np.inf
    for idx in range(nkeep):
        k = order[idx]
        if klo[k] > cur:
            olo[m] = cur
            ohi[m] = klo[k]
            oa[m] = 0.0
            ob[m] = 0.0
            oc[m] = cst
            otag[m] = tag_new
            m += 1
        if khi[k] > cur:
            cur = khi[k]
    if cur < np.inf:
        olo[m] = cur
        ohi[m] = np.inf
        oa[m] = 0.0
        ob[m] = 0.0
        oc[m] = cst
        otag[m] = tag_new
        m += 1
    return _sort_and_merge(olo[:m], ohi[:m], oa[:m], ob[:m], oc[:m], otag[:m])


@dataclass(frozen=True)
class Piece:
    """A closed piece ``a*t**2 + b*t + c`` on ``[lo, hi]``."""

    lo: float
    hi: float
    a: float
    b: float
    c: float
    tag: int

    def __call__(self, t: float) -> float:
        if self.lo <= t <= self.hi:
            return (self.a * t + self.b) * t + self.c
        return np.inf


class PiecewiseQuadratic:
    """Immutable piecewise linear-quadratic function.

    Parameters
    ----------
    lo, hi, a, b, c : array_like of float
        Piece intervals and coefficients.
    tag : array_like of int
        Provenance tag of each piece.

    Every operation returns a new instance; the arrays are marked read-only.
    """

    __slots__ = ("lo", "hi", "a", "b", "c", "tag")

    def __init__(self, lo, hi, a, b, c, tag):
        arrs = [np.ascontiguousarray(v, dtype=np.float64) for v in (lo, hi, a, b, c)]
        arrs.append(np.ascontiguousarray(tag, dtype=np.int64))
        size = arrs[0].size
        if any(v.ndim != 1 or v.size != size for v in arrs):
            raise ValueError("piece arrays must be 1-d and of equal length")
        if np.any(arrs[0] > arrs[1]):
            raise ValueError("every piece needs lo <= hi")
        order = np.argsort(arrs[0], kind="mergesort")
        for name, v in zip(self.__slots__, arrs):
            v = v[order]
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def __setattr__(self, name, value):
        raise AttributeError("PiecewiseQuadratic is immutable")

    @classmethod
    def from_pieces(cls, pieces) -> "PiecewiseQuadratic":
        pieces = list(pieces)
        cols = list(zip(*[(p.lo, p.hi, p.a, p.b, p.c, p.tag) for p in pieces])) or [()] * 6
        return cls(*cols)

    @classmethod
    def quadratic(cls, a=0.0, b=0.0, c=0.0, lo=-np.inf, hi=np.inf, tag=0):
        """A single piece ``a*t**2 + b*t + c`` on ``[lo, hi]``."""
        return cls([lo], [hi], [a], [b], [c], [tag])

    @classmethod
    def _wrap(cls, arrays) -> "PiecewiseQuadratic":
        return cls(*arrays)

    def _arrays(self):
        return self.lo, self.hi, self.a, self.b, self.c, self.tag

    def __len__(self) -> int:
        return self.lo.size

    @property
    def pieces(self) -> list[Piece]:
        return [Piece(*map(float, row[:5]), int(row[5]))
                for row in zip(*self._arrays())]

    def __call__(self, t: float) -> float:
        return self.eval(t)

    def eval(self, t: float) -> float:
        """Minimum over covering pieces; ``+inf`` off the domain."""
        return float(_eval(*self._arrays(), float(t))[0])

    def eval_with_tag(self, t: float) -> tuple[float, int]:
        v, tg = _eval(*self._arrays(), float(t))
        return float(v), int(tg)

    def add_quadratic(self, a: float, b: float, c: float) -> "PiecewiseQuadratic":
        """Pointwise sum with ``a*t**2 + b*t + c`` on the current domain."""
        return self._wrap(_add_quadratic(*self._arrays(), float(a), float(b), float(c)))

    def add_l0_box(self, lam2: float, lo: float, hi: float) -> "PiecewiseQuadratic":
        """Add ``lam2*|t|_0`` and the indicator of ``[lo, hi]``."""
        if lo > hi:
            raise ValueError(f"empty box [{lo}, {hi}]")
        if lam2 < 0:
            raise ValueError("lam2 must be nonnegative")
        return self._wrap(_add_l0_box(*self._arrays(), float(lam2), float(lo), float(hi)))

    def min_with_constant(self, c: float, tag_new: int) -> "PiecewiseQuadratic":
        """Pointwise minimum with the constant ``c`` over the whole real line.

        Where the constant is strictly smaller its pieces carry ``tag_new``;
        ties stay with the original pieces.
        """
        if not np.isfinite(c):
            raise ValueError("constant must be finite")
        return self._wrap(_min_with_constant(*self._arrays(), float(c), int(tag_new)))

    def global_min(self) -> tuple[float, float, int]:
        """Return ``(argmin, min value, tag)``.

        Among several minimizers the smallest point wins, then the smallest tag.
        """
        if len(self) == 0:
            raise ValueError("empty domain")
        lo, hi, a, b = self.lo, self.hi, self.a, self.b
        down_left = np.isneginf(lo) & ((a < 0) | ((a == 0) & (b > 0)))
        down_right = np.isposinf(hi) & ((a < 0) | ((a == 0) & (b < 0)))
        if np.any(down_left | down_right):
            raise ValueError("function is unbounded below")
        t, v, tg = _global_min(*self._arrays())
        return float(t), float(v), int(tg)

    def dump(self) -> str:
        """One ``lo hi a b c tag`` line per piece."""
        return "\n".join(
            f"{lo!r} {hi!r} {a!r} {b!r} {c!r} {tg}"
            for lo, hi, a, b, c, tg in zip(*(v.tolist() for v in self._arrays()))
        )

    def __repr__(self) -> str:
        return f"PiecewiseQuadratic({len(self)} pieces)"


# Functional spellings of the methods.

def eval(f: PiecewiseQuadratic, t: float) -> float:  # noqa: A001
    return f.eval(t)


def add_quadratic(f: PiecewiseQuadratic, a: float, b: float, c: float) -> PiecewiseQuadratic:
    return f.add_quadratic(a, b, c)


def add_l0_box(f: PiecewiseQuadratic, lam2: float, lo: float, hi: float) -> PiecewiseQuadratic:
    return f.add_l0_box(lam2, lo, hi)


def min_with_constant(f: PiecewiseQuadratic, c: float, tag_new: int) -> PiecewiseQuadratic:
    return f.min_with_constant(c, tag_new)


def global_min(f: PiecewiseQuadratic) -> tuple[float, float, int]:
    return f.global_min()
