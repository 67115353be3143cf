"""Coded-aperture mask generation.

Theoretical masks are zero-mean and drive the RIP analysis; implementable
masks are nonnegative with entries in ``[0, 1/n]`` so the aperture is
flux-preserving.  Mask sequences hold one pattern per high-rate frame of a
keyed exposure and can be re-coded by a temporal transform ``W``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    STREAM_BINARIZE,
    STREAM_MASK,
    STREAM_PHASE,
    DegenerateError,
    DomainError,
    ShapeError,
    UnsupportedParameterError,
    make_rng,
)

GENERATORS = {"binary": "BS", "uniform": "US", "gaussian": "GS"}
FAMILIES = ("BS", "US", "GS", "UP")

IMAG_TOL = 1e-10


@dataclass(frozen=True)
class MaskPattern:
    values: np.ndarray
    form: str = "theoretical"  # or "implementable"
    generator: str = "BS"
    d: int = 1
    seed: int | None = None

    @property
    def shape(self):
        return self.values.shape

    @property
    def n(self):
        return self.values.size

    def sidecar(self):
        return {"generator": self.generator, "form": self.form, "d": self.d, "seed": self.seed}


@dataclass(frozen=True)
class MaskSequence:
    masks: np.ndarray  # (B, n1, n2)
    form: str = "theoretical"
    generator: str = "BS"
    d: int = 1
    coding: np.ndarray | None = field(default=None, compare=False)  # W, or None for independent

    @property
    def B(self):
        return self.masks.shape[0]

    @property
    def shape(self):
        return self.masks.shape[1:]

    def __len__(self):
        return self.B

    def __getitem__(self, t):
        return MaskPattern(self.masks[t], self.form, self.generator, self.d)


def _check_dims(n1, n2, d):
    n1, n2, d = int(n1), int(n2), int(d)
    if n1 < 1 or n2 < 1 or d < 1:
        raise DomainError("n1, n2 and d must be positive")
    return n1, n2, d


def gen_spatial_mask(dist, n1, n2, d, seed, *, stream=()):
    """Draw an i.i.d. zero-mean mask with entry variance ``d/n``.

    ``binary`` gives the scaled Rademacher entries ``+-sqrt(d/n)``,
    ``uniform`` draws from ``[-sqrt(3d/n), sqrt(3d/n)]`` and ``gaussian``
    from ``Normal(0, d/n)``.
    """
    n1, n2, d = _check_dims(n1, n2, d)
    if dist not in GENERATORS:
        raise UnsupportedParameterError(f"unknown mask distribution {dist!r}")
    n = n1 * n2
    rng = make_rng(seed, STREAM_MASK, *stream)
    scale = np.sqrt(d / n)
    if dist == "binary":
        values = np.where(rng.integers(0, 2, size=(n1, n2)) == 1, scale, -scale)
    elif dist == "uniform":
        a = np.sqrt(3.0) * scale
        values = rng.uniform(-a, a, size=(n1, n2))
    else:
        values = rng.normal(0.0, scale, size=(n1, n2))
    return MaskPattern(values, "theoretical", GENERATORS[dist], d, int(seed))


def _conjugate_index(n1, n2):
    k1, k2 = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    return (((-k1) % n1) * n2 + (-k2) % n2).ravel()


def gen_uniform_phase_mask(n1, n2, seed, *, stream=()):
    """Random unit-modulus transfer function and its real convolution kernel.

    Self-conjugate frequencies get a random sign; every other conjugate pair
    gets ``exp(i*phi)`` with ``phi ~ U(0, 2pi)`` and its partner the complex
    conjugate.  Returns ``(mask, sigma)`` with ``mask = real(ifft2(sigma))``.
    """
    n1, n2 = int(n1), int(n2)
    if n1 < 2 or n2 < 2 or n1 % 2 or n2 % 2:
        raise UnsupportedParameterError("uniform-phase masks need even dimensions")
    rng = make_rng(seed, STREAM_PHASE, *stream)
    partner = _conjugate_index(n1, n2)
    idx = np.arange(n1 * n2)
    self_conj = idx == partner
    reps = idx < partner
    sigma = np.empty(n1 * n2, dtype=np.complex128)
    sigma[self_conj] = np.where(rng.integers(0, 2, size=int(self_conj.sum())) == 1, 1.0, -1.0)
    phi = rng.uniform(0.0, 2.0 * np.pi, size=int(reps.sum()))
    sigma[idx[reps]] = np.exp(1j * phi)
    sigma[partner[reps]] = np.exp(-1j * phi)
    sigma = sigma.reshape(n1, n2)
    h = np.fft.ifft2(sigma)
    resid = float(np.max(np.abs(h.imag)))
    if resid > IMAG_TOL:
        raise DegenerateError(f"phase mask inverse transform not real (residue {resid:.3g})")
    return MaskPattern(h.real.copy(), "theoretical", "UP", 1, int(seed)), sigma


def gen_mask(family, n1, n2, d, seed, *, stream=()):
    """Theoretical mask for a family code in ``BS, US, GS, UP``."""
    family = family.upper()
    if family == "UP":
        mask, _ = gen_uniform_phase_mask(n1, n2, seed, stream=stream)
        return MaskPattern(mask.values, "theoretical", "UP", int(d), int(seed))
    inverse = {v: k for k, v in GENERATORS.items()}
    if family not in inverse:
        raise UnsupportedParameterError(f"unknown mask family {family!r}")
    return gen_spatial_mask(inverse[family], n1, n2, d, seed, stream=stream)


def _implementable_values(h):
    lo, hi = float(h.min()), float(h.max())
    if not hi > lo:
        raise DegenerateError("constant mask cannot be mapped to an implementable aperture")
    # divide before scaling by 1/n so the extremes land on exactly 0 and 1/n
    return (h - lo) / (hi - lo) / h.size


def to_implementable(mask):
    """Affinely map a theoretical mask onto ``[0, 1/n]``.

    The minimum entry goes to 0 and the maximum to ``1/n``.  For a binary
    mask that is the affine map of ``[-sqrt(d/n), sqrt(d/n)]`` and the entries
    land exactly on ``{0, 1/n}``.
    """
    if mask.form != "theoretical":
        raise DomainError("mask is already implementable")
    return MaskPattern(_implementable_values(mask.values), "implementable", mask.generator, mask.d, mask.seed)


def gen_mask_sequence(family, n1, n2, d, B, seed):
    """``B`` independently drawn theoretical masks (one stream per frame)."""
    if int(B) < 1:
        raise DomainError("B must be at least 1")
    masks = np.stack([gen_mask(family, n1, n2, d, seed, stream=(t,)).values for t in range(int(B))])
    return MaskSequence(masks, "theoretical", family.upper(), int(d))


def sequence_to_implementable(seq):
    """Map every mask of a sequence onto ``[0, 1/n]`` independently."""
    if seq.form != "theoretical":
        raise DomainError("sequence is already implementable")
    masks = np.stack([_implementable_values(h) for h in seq.masks])
    return MaskSequence(masks, "implementable", seq.generator, seq.d, seq.coding)


def difference_matrix(B):
    """The invertible first-difference matrix: ones on the diagonal, -1 below."""
    return np.eye(B) - np.eye(B, k=-1)


def cumulative_matrix(B):
    """Inverse of :func:`difference_matrix`: lower-triangular all ones."""
    return np.tril(np.ones((B, B)))


def transform_mask_sequence(seq, W):
    """Re-code masks so that output ``t`` is ``sum_k W[k, t] * mask_k``.

    Sensing a frame block with the returned masks equals sensing the
    coefficients ``theta_k = sum_t W[k, t] f_t`` with the original masks.
    """
    W = np.asarray(W, dtype=np.float64)
    B = seq.B
    if W.shape != (B, B):
        raise ShapeError(f"W must be {B}x{B}, got {W.shape}")
    if np.linalg.matrix_rank(W) < B:
        raise DomainError("W is singular")
    masks = np.einsum("kt,kij->tij", W, seq.masks)
    return MaskSequence(masks, seq.form, seq.generator, seq.d, W)


def binarize_mask(mask, seed, *, stream=()):
    """Round intermediate entries of an implementable mask to 0 or ``1/n`` at random."""
    if mask.form != "implementable":
        raise DomainError("binarize expects an implementable mask")
    v = np.asarray(mask.values, dtype=np.float64)
    top = 1.0 / v.size
    tol = 1e-12 * top
    is_zero = np.abs(v) <= tol
    is_top = np.abs(v - top) <= tol
    rng = make_rng(seed, STREAM_BINARIZE, *stream)
    coin = rng.integers(0, 2, size=v.shape) == 1
    out = np.where(is_zero, 0.0, np.where(is_top, top, np.where(coin, top, 0.0)))
    return MaskPattern(out, "implementable", mask.generator, mask.d, mask.seed)


def binarize_sequence(seq, seed):
    masks = np.stack([binarize_mask(seq[t], seed, stream=(t,)).values for t in range(seq.B)])
    return MaskSequence(masks, seq.form, seq.generator, seq.d, seq.coding)
