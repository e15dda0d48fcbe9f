"""
Seeded synthetic instances.

All randomness comes from a Philox counter-based generator keyed by one
64-bit seed, so an instance is a pure function of ``(kind, seed, sizes)``.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .model import LeastSquares, ProblemSpec, StudentT
from .prox import ProxParams

KINDS = ("sparse_regression", "deblur_1d", "deblur_2d", "phoneme_like")
MAX_N = 10_000


def rng_for(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def gaussian_kernel(sigma: float = 4.0, width: int = 9) -> np.ndarray:
    if width < 1 or width % 2 == 0:
        raise ValueError("filter width must be a positive odd integer")
    t = np.arange(width) - width // 2
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def blur_matrix_1d(n: int, sigma: float = 4.0, width: int = 9) -> sp.csr_matrix:
    """Convolution with a truncated Gaussian, zero boundary, same output size."""
    k = gaussian_kernel(sigma, width)
    h = width // 2
    offsets = np.arange(-h, h + 1)
    return sp.diags([np.full(n - abs(o), k[o + h]) for o in offsets if abs(o) < n],
                    [o for o in offsets if abs(o) < n], shape=(n, n), format="csr")


def blur_matrix_2d(rows: int, cols: int, sigma: float = 4.0, width: int = 9) -> sp.csr_matrix:
    """Separable 2-d blur acting on column-major vectorized images."""
    return sp.kron(blur_matrix_1d(cols, sigma, width), blur_matrix_1d(rows, sigma, width),
                   format="csr")


def piecewise_constant(rng: np.random.Generator, n: int, n_blocks: int, low: float,
                       high: float, zero_prob: float = 0.0, min_gap: float = 0.0) -> np.ndarray:
    """Random signal with ``n_blocks`` constant runs; neighbours differ by at least ``min_gap``."""
    if not 1 <= n_blocks <= n:
        raise ValueError("need 1 <= n_blocks <= n")
    cuts = np.sort(rng.choice(np.arange(1, n), size=n_blocks - 1, replace=False))
    bounds = np.concatenate(([0], cuts, [n]))
    x = np.empty(n)
    prev = np.nan
    for s, e in zip(bounds[:-1], bounds[1:]):
        while True:
            v = 0.0 if rng.random() < zero_prob else rng.uniform(low, high)
            if not abs(v - prev) < min_gap:
                break
        x[s:e] = v
        prev = v
    return x


def _check(**sizes):
    for name, v in sizes.items():
        if int(v) != v or v < 1:
            raise ValueError(f"{name} must be a positive integer")


def generate_benchmarks(kind: str, seed: int = 0, **sizes):
    """Build a seeded instance.

    Parameters
    ----------
    kind : {"sparse_regression", "deblur_1d", "deblur_2d", "phoneme_like"}
    seed : int
    **sizes
        ``n``, ``m``, ``n_blocks``, ``noise``, ``snr``, ``sigma_blur``,
        ``width``, ``lam1``/``lam2`` overrides, ``lam_scale``, depending on kind.

    Returns
    -------
    spec : ProblemSpec
        ``spec.meta`` records the generator inputs and the chosen lambdas.
    x_true : ndarray
    """
    if kind not in KINDS:
        raise ValueError(f"unknown benchmark kind {kind!r}; choose from {KINDS}")
    rng = rng_for(seed)
    meta: dict = {"kind": kind, "seed": int(seed)}
    if kind == "sparse_regression":
        m = sizes.pop("m", 100)
        n = sizes.pop("n", 200)
        n_blocks = sizes.pop("n_blocks", 10)
        snr = sizes.pop("snr", 10.0)
        _check(m=m, n=n, n_blocks=n_blocks)
        A = rng.standard_normal((m, n)) / np.sqrt(m)
        x_true = piecewise_constant(rng, n, n_blocks, -1.0, 1.0, zero_prob=0.4, min_gap=0.5)
        clean = A @ x_true
        e = rng.standard_normal(m)
        e *= np.linalg.norm(clean) / (snr * np.linalg.norm(e))
        b = clean + e
        scale = sizes.pop("lam_scale", 0.1)
        lam = scale * float(np.max(np.abs(A.T @ b)))
        # a light l0 weight; the changepoint count carries the structure
        lam2_ratio = 0.02
        lower, upper = -5.0, 5.0
        loss = LeastSquares(A, b)
        meta.update(m=m, n=n, n_blocks=n_blocks, snr=snr)
    elif kind in ("deblur_1d", "deblur_2d"):
        sigma_blur = sizes.pop("sigma_blur", 4.0)
        width = sizes.pop("width", 9)
        noise = sizes.pop("noise", 0.01)
        if kind == "deblur_1d":
            n = sizes.pop("n", 1024)
            n_blocks = sizes.pop("n_blocks", max(2, n // 32))
            _check(n=n, n_blocks=n_blocks)
            A = blur_matrix_1d(n, sigma_blur, width)
            x_true = piecewise_constant(rng, n, n_blocks, 0.0, 1.0, zero_prob=0.3, min_gap=0.1)
            meta.update(n=n, n_blocks=n_blocks)
        else:
            side = sizes.pop("side", None)
            n = sizes.pop("n", None)
            if side is None:
                side = int(round(np.sqrt(n if n is not None else 1024)))
            if n is not None and side * side != n:
                raise ValueError("deblur_2d needs n to be a perfect square")
            n_rect = sizes.pop("n_rect", 6)
            _check(side=side, n_rect=n_rect)
            n = side * side
            img = np.zeros((side, side))
            for _ in range(n_rect):
                r0, c0 = rng.integers(0, side, size=2)
                h, w = rng.integers(max(1, side // 8), max(2, side // 2), size=2)
                img[r0:r0 + h, c0:c0 + w] = rng.uniform(0.2, 1.0)
            x_true = img.ravel(order="F")
            A = blur_matrix_2d(side, side, sigma_blur, width)
            meta.update(n=n, side=side, n_rect=n_rect)
        if n > MAX_N:
            raise ValueError(f"n = {n} exceeds the desk-scale limit {MAX_N}")
        b = A @ x_true + noise * rng.standard_normal(n)
        scale = sizes.pop("lam_scale", 0.0005)
        lam = scale * float(np.max(np.abs(A.T @ b)))
        lam2_ratio = 1.0
        lower, upper = 0.0, 1.0
        loss = LeastSquares(A, b)
        meta.update(sigma_blur=sigma_blur, width=width, noise=noise)
    else:
        m = sizes.pop("m", 600)
        n = sizes.pop("n", 150)
        nu = sizes.pop("nu", 1.0)
        _check(m=m, n=n)
        # two classes of smooth spectra with shifted bumps
        freq = np.linspace(0.0, 1.0, n)
        labels = np.where(rng.random(m) < 1.0 / 3.0, 1.0, 2.0)
        centre = np.where(labels == 1.0, 0.3, 0.4)
        base = np.exp(-((freq[None, :] - centre[:, None]) / 0.1) ** 2)
        noise_mat = rng.standard_normal((m, n)) * 0.3
        A = base + np.cumsum(noise_mat, axis=1) / np.sqrt(np.arange(1, n + 1))
        b = labels
        x_true = None
        scale = sizes.pop("lam_scale", 1e-3)
        lam = scale * float(np.max(np.abs(A.T @ b)))
        lam2_ratio = 0.1
        lower, upper = -1.0, 1.0
        loss = StudentT(A, b, nu=nu)
        meta.update(m=m, n=n, nu=nu)
    lam1 = float(sizes.pop("lam1", lam))
    lam2 = float(sizes.pop("lam2", lam2_ratio * lam))
    if sizes:
        raise ValueError(f"unused size arguments for {kind}: {sorted(sizes)}")
    meta.update(lam1=lam1, lam2=lam2)
    spec = ProblemSpec(loss, ProxParams(lam1, lam2, lower, upper), meta=meta)
    if x_true is None:
        x_true = np.zeros(spec.n)
    meta["has_truth"] = kind != "phoneme_like"
    return spec, x_true
