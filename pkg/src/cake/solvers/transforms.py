"""Orthonormal multilevel 2-D Haar transform on the last two axes."""

from __future__ import annotations

import numpy as np

_S = np.sqrt(0.5)


def haar_levels(n1, n2):
    """Number of levels both dimensions can be halved; 0 if either is odd."""
    levels = 0
    while n1 % 2 == 0 and n2 % 2 == 0 and n1 > 1 and n2 > 1:
        n1 //= 2
        n2 //= 2
        levels += 1
    return levels


def _fwd_axis(x, axis):
    a = np.take(x, np.arange(0, x.shape[axis], 2), axis=axis)
    b = np.take(x, np.arange(1, x.shape[axis], 2), axis=axis)
    return np.concatenate([(a + b) * _S, (a - b) * _S], axis=axis)


def _inv_axis(c, axis):
    half = c.shape[axis] // 2
    lo = np.take(c, np.arange(half), axis=axis)
    hi = np.take(c, np.arange(half, 2 * half), axis=axis)
    a, b = (lo + hi) * _S, (lo - hi) * _S
    out = np.empty_like(c)
    idx = [slice(None)] * c.ndim
    idx[axis] = slice(0, None, 2)
    out[tuple(idx)] = a
    idx[axis] = slice(1, None, 2)
    out[tuple(idx)] = b
    return out


def haar2d(x, direction="forward", levels=None):
    """Multilevel orthonormal Haar transform with the usual quadrant layout.

    Each level transforms the low-pass corner ``[:r, :c]`` along both axes.
    Dimensions are halved as long as both stay even, so power-of-two images
    decompose fully; other sizes stop at the last even level (odd sizes are
    left untouched).
    """
    x = np.asarray(x, dtype=np.float64)
    n1, n2 = x.shape[-2:]
    max_levels = haar_levels(n1, n2)
    levels = max_levels if levels is None else min(int(levels), max_levels)
    out = x.copy()
    if direction == "forward":
        r, c = n1, n2
        for _ in range(levels):
            block = out[..., :r, :c]
            out[..., :r, :c] = _fwd_axis(_fwd_axis(block, -2), -1)
            r, c = r // 2, c // 2
        return out
    if direction == "inverse":
        sizes = [(n1 >> k, n2 >> k) for k in range(levels)]
        for r, c in reversed(sizes):
            block = out[..., :r, :c]
            out[..., :r, :c] = _inv_axis(_inv_axis(block, -1), -2)
        return out
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
