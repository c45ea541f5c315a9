"""Per-axis matrices for the fixed separable resamplers.

Every fixed filter in the package (MTF blur + decimation, binomial pyramid
steps, bilinear and EXP interpolation, box windows) is separable, so it is a
pair of small dense matrices acting on rows and columns. Building them
explicitly gives exact adjoints (the transposes) for backpropagation and makes
the boundary rule a single place: reflect-101, folded periodically when the
margin exceeds the signal length.
"""

from functools import lru_cache

import numpy as np

BINOMIAL5 = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


def reflect_index(n, before, after):
    """Source index for each sample of an (n + before + after) reflect-101 extension."""
    idx = np.arange(-before, n + after)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx > n - 1, period - idx, idx)


def correlation_matrix(n, taps):
    """(n, n) matrix of centered correlation with ``taps`` under reflect-101 borders."""
    taps = np.asarray(taps, dtype=np.float64)
    half = len(taps) // 2
    src = reflect_index(n, half, half)
    mat = np.zeros((n, n))
    rows = np.arange(n)
    for k, t in enumerate(taps):
        np.add.at(mat, (rows, src[rows + k]), t)
    return mat


def decimation_matrix(n, taps, factor):
    """Blur with ``taps`` then keep samples 0, factor, 2*factor, ..."""
    if n % factor:
        raise ValueError(f"length {n} not divisible by decimation factor {factor}")
    return correlation_matrix(n, taps)[::factor]


def expansion_matrix(n, taps):
    """Zero-insert to 2n (input lands on even samples) then correlate with ``taps``."""
    insert = np.zeros((2 * n, n))
    insert[2 * np.arange(n), np.arange(n)] = 1.0
    return correlation_matrix(2 * n, taps) @ insert


def bilinear_matrix(n, factor):
    """Half-pixel-centred (align-corners-false) linear interpolation by ``factor``."""
    out = n * factor
    src = (np.arange(out) + 0.5) / factor - 0.5
    src = np.clip(src, 0.0, n - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    w_hi = src - lo
    mat = np.zeros((out, n))
    rows = np.arange(out)
    np.add.at(mat, (rows, lo), 1.0 - w_hi)
    np.add.at(mat, (rows, hi), w_hi)
    return mat


@lru_cache(maxsize=None)
def pyr_down_matrix(n):
    return decimation_matrix(n, BINOMIAL5, 2)


@lru_cache(maxsize=None)
def pyr_up_matrix(n):
    return expansion_matrix(n, 2.0 * BINOMIAL5)


@lru_cache(maxsize=None)
def bilinear_up_matrix(n, factor):
    return bilinear_matrix(n, factor)


def apply_separable(x, mat_h, mat_w):
    """``mat_h @ x @ mat_w.T`` over the last two axes of ``x``."""
    mat_h = mat_h.astype(x.dtype, copy=False)
    mat_w = mat_w.astype(x.dtype, copy=False)
    return np.matmul(np.matmul(mat_h, x), mat_w.T)
