"""Mean-subtraction preconditioning for nonnegative sensing operators.

An implementable mask makes every entry of ``A`` nonnegative, which puts one
large singular value on the constant direction.  Working with
``A0 = A - mu_A * ones(m, n)`` and zero-mean data removes it; the signal mean
is estimated separately and added back at the end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DegenerateError, ShapeError
from .operators import LinearOperator


def mean_of_operator(A):
    """Mean of the entries of ``A``, from a single apply to the ones vector."""
    return float(np.sum(A.apply(np.ones(A.in_shape)))) / (A.out_dim * A.in_dim)


class ZeroMeanOperator(LinearOperator):
    """Matrix-free ``A - mu * ones(m, n)``."""

    def __init__(self, A, mu):
        super().__init__(A.in_shape, A.out_shape, name=f"{A.name}-mean")
        self.base = A
        self.mu = float(mu)

    def _sum_trailing(self, x, shape):
        return x.reshape(x.shape[: x.ndim - len(shape)] + (-1,)).sum(axis=-1)

    def _apply(self, x):
        s = self._sum_trailing(x, self.in_shape)
        out = self.base._apply(x)
        return out - self.mu * s.reshape(s.shape + (1,) * len(self.out_shape))

    def _adjoint(self, y):
        s = self._sum_trailing(y, self.out_shape)
        out = self.base._adjoint(y)
        return out - self.mu * s.reshape(s.shape + (1,) * len(self.in_shape))


@dataclass
class PreconditionedSystem:
    A: LinearOperator
    y: np.ndarray
    mu_A: float = field(init=False)
    mu_y: float = field(init=False)
    y0: np.ndarray = field(init=False)
    A0: ZeroMeanOperator = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        self.mu_A = mean_of_operator(self.A)
        self.mu_y = float(np.mean(self.y))
        self.y0 = self.y - self.mu_y
        self.A0 = ZeroMeanOperator(self.A, self.mu_A)

    @property
    def n(self):
        return self.A.in_dim

    @property
    def m(self):
        return self.A.out_dim


class BlockZeroMeanOperator(LinearOperator):
    """``A - sum_k mu_k * e_k 1_k^T`` for keyed-exposure operators.

    Observed frame ``k`` only sees the ``B`` frames of its own block, so the
    constant direction of ``A`` is one per block rather than one overall.
    """

    def __init__(self, A, mu, B):
        super().__init__(A.in_shape, A.out_shape, name=f"{A.name}-blockmean")
        self.base = A
        self.mu = np.asarray(mu, dtype=np.float64)
        self.B = int(B)
        self.K = self.mu.size

    def _apply(self, x):
        lead = x.shape[: x.ndim - 3]
        s = x.reshape(lead + (self.K, -1)).sum(axis=-1)
        out = self.base._apply(x)
        return out - (self.mu * s).reshape(lead + (self.K,) + (1,) * (len(self.out_shape) - 1))

    def _adjoint(self, y):
        lead = y.shape[: y.ndim - len(self.out_shape)]
        s = y.reshape(lead + (self.K, -1)).sum(axis=-1)
        out = self.base._adjoint(y)
        return out - np.repeat(self.mu * s, self.B, axis=-1)[..., None, None]


@dataclass
class BlockPreconditionedSystem:
    """Mean subtraction applied separately to each exposure block.

    ``A`` maps ``(K*B, n1, n2)`` videos to ``(K, ...)`` observed frames.  Each
    block gets its own operator mean, data mean and signal mean estimate.
    """

    A: LinearOperator
    y: np.ndarray
    B: int
    mu_A: np.ndarray = field(init=False)
    mu_y: np.ndarray = field(init=False)
    y0: np.ndarray = field(init=False)
    A0: BlockZeroMeanOperator = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=np.float64)
        N = self.A.in_shape[0]
        if len(self.A.in_shape) != 3 or N % self.B or self.A.out_shape[0] != N // self.B:
            raise ShapeError("block mean subtraction needs a (K*B, n1, n2) -> (K, ...) operator")
        K = self.K
        per_block = self.A.apply(np.ones(self.A.in_shape)).reshape(K, -1).sum(axis=1)
        self.mu_A = per_block / (self.m * self.n)
        self.mu_y = self.y.reshape(K, -1).mean(axis=1)
        self.y0 = self.y - self.mu_y.reshape((K,) + (1,) * (self.y.ndim - 1))
        self.A0 = BlockZeroMeanOperator(self.A, self.mu_A, self.B)

    @property
    def K(self):
        return self.A.in_shape[0] // self.B

    @property
    def n(self):
        """Unknowns per block."""
        return self.A.in_dim // self.K

    @property
    def m(self):
        """Measurements per block."""
        return self.A.out_dim // self.K

    def signal_means(self):
        """Per-block ``mu_f = mu_y / (mu_A n)``."""
        if np.any(self.mu_A == 0) or not np.all(np.isfinite(self.mu_A)):
            raise DegenerateError("a block operator has zero mean; mean subtraction needs nonnegative masks")
        return self.mu_y / (self.mu_A * self.n)

    def mean_video(self):
        """Per-block signal means broadcast to the video shape."""
        return np.broadcast_to(np.repeat(self.signal_means(), self.B)[:, None, None], self.A.in_shape).copy()


def precondition(A, y):
    return PreconditionedSystem(A, y)


def apply_zero_mean(sys, f0):
    return sys.A0.apply(f0)


def estimate_signal_mean(sys):
    """``mu_f = mu_y / (mu_A n)``; exact when the scene is constant and noiseless."""
    if sys.mu_A == 0 or not np.isfinite(sys.mu_A):
        raise DegenerateError("operator has zero mean; mean subtraction needs a nonnegative operator")
    return sys.mu_y / (sys.mu_A * sys.n)


def decompose(f):
    f = np.asarray(f, dtype=np.float64)
    mu = float(np.mean(f))
    return f - mu, mu


def recompose(f0, mu_f):
    return np.asarray(f0, dtype=np.float64) + mu_f
