"""FFT-backed sensing operators and their dense oracles.

Every operator maps arrays of shape ``(..., *in_shape)`` to
``(..., *out_shape)``; leading axes are an independent batch, which is how
:func:`materialize` applies an operator to all basis vectors at once.

Convolution convention: ``(f * h)[i] = sum_k f[k] h[(i - k) mod n]`` in each
axis, computed as ``ifft2(fft2(f) * fft2(h))`` with numpy's normalisation
(unscaled forward, ``1/n`` inverse).  Under that convention the eigenvalues of
the circulant matrix are exactly ``fft2(h)``, so a mask whose transfer
function has unit modulus gives an orthogonal operator.
"""

from __future__ import annotations

import numpy as np

from .core import (
    STREAM_DOWNSAMPLE,
    CapacityError,
    DomainError,
    ShapeError,
    UnsupportedParameterError,
    make_rng,
)
from .masks import IMAG_TOL, MaskPattern, MaskSequence

MAX_DENSE_ENTRIES = 2**22
MAX_BCCB_N = 4096


def _mask_values(mask):
    return mask.values if isinstance(mask, MaskPattern) else np.asarray(mask, dtype=np.float64)


def _prod(shape):
    return int(np.prod(shape, dtype=np.int64))


class LinearOperator:
    """A linear map with an explicit adjoint."""

    def __init__(self, in_shape, out_shape, apply=None, adjoint=None, name="op"):
        self.in_shape = tuple(int(s) for s in in_shape)
        self.out_shape = tuple(int(s) for s in out_shape)
        self.name = name
        if apply is not None:
            self._apply = apply
        if adjoint is not None:
            self._adjoint = adjoint

    @property
    def in_dim(self):
        return _prod(self.in_shape)

    @property
    def out_dim(self):
        return _prod(self.out_shape)

    def _check(self, x, shape):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[x.ndim - len(shape):] != shape or x.ndim < len(shape):
            raise ShapeError(f"{self.name}: expected trailing shape {shape}, got {x.shape}")
        return x

    def apply(self, x):
        return self._apply(self._check(x, self.in_shape))

    def adjoint(self, y):
        return self._adjoint(self._check(y, self.out_shape))

    __call__ = apply

    @property
    def T(self):
        return LinearOperator(self.out_shape, self.in_shape, self._adjoint, self._apply, f"{self.name}.T")

    def __matmul__(self, other):
        if not isinstance(other, LinearOperator):
            return NotImplemented
        if other.out_shape != self.in_shape:
            raise ShapeError(f"cannot compose {self.name}{self.in_shape} with {other.name}{other.out_shape}")
        return LinearOperator(
            other.in_shape,
            self.out_shape,
            lambda x: self._apply(other._apply(x)),
            lambda y: other._adjoint(self._adjoint(y)),
            f"{self.name}@{other.name}",
        )

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}: {self.in_shape} -> {self.out_shape}>"


def identity(shape):
    return LinearOperator(shape, shape, lambda x: x.copy(), lambda y: y.copy(), "I")


# ---------------------------------------------------------------------------
# circular convolution
# ---------------------------------------------------------------------------

def conv2_circulant(image, mask):
    """Circular 2-D convolution via full complex FFTs, checking the result is real."""
    x = np.asarray(image, dtype=np.float64)
    h = _mask_values(mask)
    if x.shape[-2:] != h.shape:
        raise ShapeError(f"image {x.shape} and mask {h.shape} differ")
    out = np.fft.ifft2(np.fft.fft2(x) * np.fft.fft2(h))
    resid = float(np.max(np.abs(out.imag))) if out.size else 0.0
    scale = max(1.0, float(np.max(np.abs(out.real))) if out.size else 1.0)
    if resid > IMAG_TOL * scale:
        raise ShapeError(f"convolution result not real (residue {resid:.3g})")
    return out.real


class Circulant(LinearOperator):
    """``R = F^-1 diag(F h) F`` applied with real FFTs."""

    def __init__(self, mask):
        h = _mask_values(mask)
        if h.ndim != 2:
            raise ShapeError("mask must be 2-D")
        super().__init__(h.shape, h.shape, name="R")
        self.kernel = h
        self.transfer = np.fft.rfft2(h)
        self._transfer_conj = np.conj(self.transfer)

    def _apply(self, x):
        return np.fft.irfft2(np.fft.rfft2(x) * self.transfer, s=self.in_shape)

    def _adjoint(self, y):
        return np.fft.irfft2(np.fft.rfft2(y) * self._transfer_conj, s=self.in_shape)


def build_bccb_dense(mask):
    """Explicit ``n x n`` matrix of circular convolution with ``mask``.

    Rows and columns follow row-major pixel order:
    ``R[(i1, i2), (k1, k2)] = h[(i1 - k1) mod n1, (i2 - k2) mod n2]``.
    """
    h = _mask_values(mask)
    n1, n2 = h.shape
    if n1 * n2 > MAX_BCCB_N:
        raise CapacityError(f"n = {n1 * n2} exceeds dense oracle limit {MAX_BCCB_N}")
    i1, i2 = np.divmod(np.arange(n1 * n2), n2)
    return h[(i1[:, None] - i1[None, :]) % n1, (i2[:, None] - i2[None, :]) % n2]


def column_major_permutation(n1, n2):
    """Index map from column-major pixel order to row-major order.

    ``R[np.ix_(p, p)]`` re-expresses a row-major operator in the column-major
    vectorisation, where the BCCB matrix is ``n2 x n2`` blocks of circulant
    ``n1 x n1`` blocks.
    """
    k = np.arange(n1 * n2)
    i1, i2 = k % n1, k // n1
    return i1 * n2 + i2


# ---------------------------------------------------------------------------
# downsamplers
# ---------------------------------------------------------------------------

DOWNSAMPLE_KINDS = ("subsample", "integrate", "random-sum", "demodulate", "random-rows")
_KIND_ALIASES = {
    "sub": "subsample",
    "int": "integrate",
    "randsum": "random-sum",
    "demod": "demodulate",
    "randrows": "random-rows",
}


def canonical_kind(kind):
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in DOWNSAMPLE_KINDS:
        raise UnsupportedParameterError(f"unknown downsampler {kind!r}")
    return kind


def _block_sum(x, d1, d2):
    *lead, n1, n2 = x.shape
    return x.reshape(*lead, n1 // d1, d1, n2 // d2, d2).sum(axis=(-3, -1))


def _block_replicate(y, d1, d2):
    return np.repeat(np.repeat(y, d1, axis=-2), d2, axis=-1)


def random_sum_pattern(n1, n2, d1, d2, count, seed):
    """0/1 selection image with exactly ``count`` ones in every ``d1 x d2`` block."""
    rng = make_rng(seed, STREAM_DOWNSAMPLE, 1)
    m1, m2, bs = n1 // d1, n2 // d2, d1 * d2
    keys = rng.random((m1, m2, bs))
    ranks = np.argsort(np.argsort(keys, axis=-1, kind="stable"), axis=-1, kind="stable")
    sel = (ranks < count).astype(np.float64).reshape(m1, m2, d1, d2)
    return sel.transpose(0, 2, 1, 3).reshape(n1, n2)


def demodulation_signs(n1, n2, seed):
    rng = make_rng(seed, STREAM_DOWNSAMPLE, 2)
    return np.where(rng.integers(0, 2, size=(n1, n2)) == 1, 1.0, -1.0)


def random_rows(n, m, seed):
    rng = make_rng(seed, STREAM_DOWNSAMPLE, 3)
    return np.sort(rng.choice(n, size=m, replace=False))


class Downsampler(LinearOperator):
    """Reduce an ``n1 x n2`` image to ``m1 x m2`` detector samples.

    ``subsample`` keeps the top-left pixel of each ``d1 x d2`` block,
    ``integrate`` sums each block, ``random-sum`` sums ``count`` seeded
    positions per block, ``demodulate`` multiplies by a seeded sign image and
    integrates, and ``random-rows`` keeps ``m`` seeded pixel positions
    (returned as a flat vector).
    """

    def __init__(self, kind, n1, n2, d1, d2, *, count=None, seed=0, m=None, weights=None):
        kind = canonical_kind(kind)
        n1, n2, d1, d2 = int(n1), int(n2), int(d1), int(d2)
        if min(n1, n2, d1, d2) < 1:
            raise DomainError("dimensions and block sizes must be positive")
        if n1 % d1 or n2 % d2:
            raise ShapeError(f"block {d1}x{d2} does not divide image {n1}x{n2}")
        m1, m2 = n1 // d1, n2 // d2
        self.kind, self.d1, self.d2, self.seed = kind, d1, d2, int(seed)
        self.count = None
        self.weights = None
        self.rows = None
        out_shape = (m1, m2)
        if kind == "random-sum":
            bs = d1 * d2
            count = bs // 2 if count is None else int(count)
            if not 1 <= count <= bs:
                raise DomainError(f"random-sum count must lie in [1, {bs}], got {count}")
            self.count = count
            self.weights = random_sum_pattern(n1, n2, d1, d2, count, seed) if weights is None else weights
        elif kind == "demodulate":
            self.weights = demodulation_signs(n1, n2, seed) if weights is None else weights
        elif kind == "random-rows":
            m = m1 * m2 if m is None else int(m)
            if not 1 <= m <= n1 * n2:
                raise DomainError(f"random-rows needs 1 <= m <= n, got {m}")
            self.rows = random_rows(n1 * n2, m, seed)
            out_shape = (m,)
        super().__init__((n1, n2), out_shape, name=f"D[{kind}]")

    @property
    def block(self):
        return self.d1, self.d2

    def _apply(self, x):
        k = self.kind
        if k == "subsample":
            return np.ascontiguousarray(x[..., :: self.d1, :: self.d2])
        if k == "integrate":
            return _block_sum(x, self.d1, self.d2)
        if k in ("random-sum", "demodulate"):
            return _block_sum(x * self.weights, self.d1, self.d2)
        return x.reshape(*x.shape[:-2], -1)[..., self.rows]

    def _adjoint(self, y):
        k = self.kind
        n1, n2 = self.in_shape
        if k == "subsample":
            out = np.zeros(y.shape[:-2] + (n1, n2))
            out[..., :: self.d1, :: self.d2] = y
            return out
        if k == "integrate":
            return _block_replicate(y, self.d1, self.d2)
        if k in ("random-sum", "demodulate"):
            return _block_replicate(y, self.d1, self.d2) * self.weights
        out = np.zeros(y.shape[:-1] + (n1 * n2,))
        out[..., self.rows] = y
        return out.reshape(*y.shape[:-1], n1, n2)


def downsample(x, down):
    return down.apply(x)


class Sensing(LinearOperator):
    """``A = D R``: convolve with the mask, then downsample."""

    def __init__(self, mask, down):
        h = _mask_values(mask)
        if h.shape != down.in_shape:
            raise ShapeError(f"mask {h.shape} does not match downsampler input {down.in_shape}")
        super().__init__(h.shape, down.out_shape, name=f"A[{down.kind}]")
        self.mask = mask
        self.conv = Circulant(h)
        self.down = down

    def _apply(self, x):
        return self.down._apply(self.conv._apply(x))

    def _adjoint(self, y):
        return self.conv._adjoint(self.down._adjoint(y))


def compose_sensing(mask, down):
    return Sensing(mask, down)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

GRADIENT_VARIANTS = ("nabla", "circulant", "inverse")


def gradient_apply(x, variant="nabla", axis=-1):
    """First differences along ``axis``.

    ``nabla`` keeps the first sample (the invertible difference),
    ``circulant`` wraps around so constants map to zero, and ``inverse`` is
    the cumulative sum that undoes ``nabla``.
    """
    x = np.asarray(x, dtype=np.float64)
    if variant == "nabla":
        return np.diff(x, axis=axis, prepend=0.0)
    if variant == "circulant":
        return x - np.roll(x, 1, axis=axis)
    if variant == "inverse":
        return np.cumsum(x, axis=axis)
    raise UnsupportedParameterError(f"unknown gradient variant {variant!r}")


def gradient_adjoint(y, variant="nabla", axis=-1):
    y = np.asarray(y, dtype=np.float64)
    if variant == "nabla":
        return -np.diff(y, axis=axis, append=0.0)
    if variant == "circulant":
        return y - np.roll(y, -1, axis=axis)
    if variant == "inverse":
        return np.flip(np.cumsum(np.flip(y, axis=axis), axis=axis), axis=axis)
    raise UnsupportedParameterError(f"unknown gradient variant {variant!r}")


def gradient_inverse(x, axis=-1):
    return gradient_apply(x, "inverse", axis)


class Gradient(LinearOperator):
    def __init__(self, shape, variant="nabla", axis=-1):
        if variant not in GRADIENT_VARIANTS:
            raise UnsupportedParameterError(f"unknown gradient variant {variant!r}")
        super().__init__(shape, shape, name=f"grad[{variant}]")
        self.variant = variant
        # normalise to a negative axis so leading batch dimensions are ignored
        self.axis = axis if axis < 0 else axis - len(self.in_shape)

    def _apply(self, x):
        return gradient_apply(x, self.variant, self.axis)

    def _adjoint(self, y):
        return gradient_adjoint(y, self.variant, self.axis)


# ---------------------------------------------------------------------------
# keyed exposure
# ---------------------------------------------------------------------------

class CakeOperator(LinearOperator):
    """Coded-aperture keyed exposure over ``K`` blocks of ``B`` frames.

    Input is a video ``(N, n1, n2)`` with ``N = K * B`` and one mask per
    frame; output is ``(K, *down.out_shape)`` where observed frame ``k`` is
    ``D(sum_t conv(f_{kB+t}, h_{kB+t}))``.
    """

    def __init__(self, masks, B, down):
        if isinstance(masks, MaskSequence):
            masks = masks.masks
        masks = np.asarray(masks, dtype=np.float64)
        if masks.ndim == 2:
            masks = masks[None]
        N, n1, n2 = masks.shape
        B = int(B)
        if B < 1 or N % B:
            raise ShapeError(f"{N} masks do not split into blocks of {B}")
        if (n1, n2) != down.in_shape:
            raise ShapeError(f"mask {n1}x{n2} does not match downsampler input {down.in_shape}")
        self.K, self.B = N // B, B
        super().__init__((N, n1, n2), (self.K,) + down.out_shape, name=f"CAKE[B={B},{down.kind}]")
        self.masks = masks
        self.down = down
        self.transfer = np.fft.rfft2(masks)
        self._transfer_conj = np.conj(self.transfer)

    def _apply(self, x):
        n1, n2 = self.in_shape[1:]
        conv = np.fft.irfft2(np.fft.rfft2(x) * self.transfer, s=(n1, n2))
        summed = conv.reshape(*x.shape[:-3], self.K, self.B, n1, n2).sum(axis=-3)
        return self.down._apply(summed)

    def _adjoint(self, y):
        n1, n2 = self.in_shape[1:]
        up = self.down._adjoint(y)  # (..., K, n1, n2)
        up = np.repeat(up, self.B, axis=-3)
        return np.fft.irfft2(np.fft.rfft2(up) * self._transfer_conj, s=(n1, n2))


def cake_apply(masks, down, block):
    """Observed frame for a single block of ``B`` frames."""
    block = np.asarray(block, dtype=np.float64)
    seq = masks.masks if isinstance(masks, MaskSequence) else np.asarray(masks)
    if block.shape[0] != seq.shape[0]:
        raise ShapeError(f"{seq.shape[0]} masks for {block.shape[0]} frames")
    return CakeOperator(seq, seq.shape[0], down).apply(block)[0]


class FrameTransform(LinearOperator):
    """``(M ⊗ I_n)`` acting on the frame axis of a video."""

    def __init__(self, M, frame_shape):
        M = np.asarray(M, dtype=np.float64)
        N = M.shape[0]
        if M.shape != (N, N):
            raise ShapeError("frame transform must be square")
        shape = (N,) + tuple(frame_shape)
        super().__init__(shape, shape, name="frameT")
        self.M = M

    def _apply(self, x):
        return np.einsum("st,...tij->...sij", self.M, x)

    def _adjoint(self, y):
        return np.einsum("ts,...tij->...sij", self.M, y)


class FrameCumsum(LinearOperator):
    """``(L ⊗ I_n)``: running sum over frames, the inverse of frame differencing."""

    def __init__(self, shape):
        super().__init__(shape, shape, name="L")

    def _apply(self, x):
        return np.cumsum(x, axis=-3)

    def _adjoint(self, y):
        return np.flip(np.cumsum(np.flip(y, axis=-3), axis=-3), axis=-3)


# ---------------------------------------------------------------------------
# dense materialisation
# ---------------------------------------------------------------------------

def materialize(op, chunk=1024):
    """Dense ``out_dim x in_dim`` matrix whose column ``j`` is ``op(e_j)``."""
    n, m = op.in_dim, op.out_dim
    if n * m > MAX_DENSE_ENTRIES:
        raise CapacityError(f"{m}x{n} exceeds the dense limit of {MAX_DENSE_ENTRIES} entries")
    out = np.empty((m, n))
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        basis = np.zeros((stop - start, n))
        basis[np.arange(stop - start), np.arange(start, stop)] = 1.0
        cols = op.apply(basis.reshape((stop - start,) + op.in_shape))
        out[:, start:stop] = cols.reshape(stop - start, m).T
    return out


def materialize_adjoint(op, chunk=1024):
    return materialize(op.T, chunk)


def sensing_matrix_direct(h, d1, d2):
    """Subsampled-convolution matrix built from the entry formula.

    Row ``(l1, l2)`` and column ``(k1, k2)`` hold
    ``h[(l1 d1 - k1) mod n1, (l2 d2 - k2) mod n2]``; no FFT involved.
    """
    h = _mask_values(h)
    n1, n2 = h.shape
    m1, m2 = n1 // d1, n2 // d2
    l1, l2 = np.divmod(np.arange(m1 * m2), m2)
    k1, k2 = np.divmod(np.arange(n1 * n2), n2)
    return h[(l1[:, None] * d1 - k1[None, :]) % n1, (l2[:, None] * d2 - k2[None, :]) % n2]
