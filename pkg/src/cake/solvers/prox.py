"""Proximal maps and the penalty descriptions the solver understands."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DomainError, UnsupportedParameterError
from .transforms import haar2d

PENALTY_KINDS = ("l1-pixel", "l1-transform", "tv-aniso", "tv-iso", "video-composite")


def prox_l1(v, t):
    """Soft thresholding; ``|v| == t`` maps to zero."""
    if t < 0:
        raise DomainError("threshold must be nonnegative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


# ---------------------------------------------------------------------------
# total variation
# ---------------------------------------------------------------------------

def grad2(u):
    """Forward differences on the last two axes, zero on the far boundary."""
    g = np.zeros((2,) + u.shape)
    g[0, ..., :-1, :] = u[..., 1:, :] - u[..., :-1, :]
    g[1, ..., :, :-1] = u[..., :, 1:] - u[..., :, :-1]
    return g


def grad2_adjoint(g):
    z = np.zeros(g.shape[1:])
    z[..., :-1, :] -= g[0, ..., :-1, :]
    z[..., 1:, :] += g[0, ..., :-1, :]
    z[..., :, :-1] -= g[1, ..., :, :-1]
    z[..., :, 1:] += g[1, ..., :, :-1]
    return z


def tv_norm(u, variant="iso"):
    g = grad2(np.asarray(u, dtype=np.float64))
    if variant == "aniso":
        return float(np.abs(g).sum())
    if variant == "iso":
        return float(np.sqrt(g[0] ** 2 + g[1] ** 2).sum())
    raise UnsupportedParameterError(f"unknown TV variant {variant!r}")


def _project(p, variant):
    if variant == "aniso":
        return np.clip(p, -1.0, 1.0)
    mag = np.sqrt(p[0] ** 2 + p[1] ** 2)
    return p / np.maximum(1.0, mag)


def prox_tv_dual(v, t, variant="iso", inner_iters=20, p0=None):
    """TV prox returning ``(u, p)`` so the dual ``p`` can warm-start the next call.

    Runs projected gradient with step ``1/(8t)`` on the dual of
    ``min_u 0.5 ||u - v||^2 + t TV(u)``; the primal is ``u = v - t D^T p``.
    """
    v = np.asarray(v, dtype=np.float64)
    if t < 0:
        raise DomainError("TV weight must be nonnegative")
    if variant not in ("iso", "aniso"):
        raise UnsupportedParameterError(f"unknown TV variant {variant!r}")
    if t == 0:
        return v.copy(), np.zeros((2,) + v.shape) if p0 is None else p0
    p = np.zeros((2,) + v.shape) if p0 is None else p0
    step = 1.0 / (8.0 * t)
    for _ in range(int(inner_iters)):
        u = v - t * grad2_adjoint(p)
        p = _project(p + step * grad2(u), variant)
    return v - t * grad2_adjoint(p), p


def prox_tv(v, t, variant="iso", inner_iters=20):
    return prox_tv_dual(v, t, variant, inner_iters)[0]


# ---------------------------------------------------------------------------
# penalties
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Penalty:
    """Regulariser ``tau * psi(x)``.

    ``video-composite`` acts on a stack of frame coefficients: TV with weight
    ``tau_tv`` on the first, ``l1`` with weight ``tau_l1`` on the rest.
    """

    kind: str
    tau: float = 0.0
    tau_tv: float = 0.0
    tau_l1: float = 0.0
    transform: str = "haar"
    tv_variant: str = "iso"
    inner_iters: int = 20

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise UnsupportedParameterError(f"unknown penalty {self.kind!r}")
        if min(self.tau, self.tau_tv, self.tau_l1) < 0:
            raise DomainError("penalty weights must be nonnegative")
        if self.kind == "l1-transform" and self.transform != "haar":
            raise UnsupportedParameterError(f"unknown transform {self.transform!r}")

    def value(self, x):
        k = self.kind
        if k == "l1-pixel":
            return self.tau * float(np.abs(x).sum())
        if k == "l1-transform":
            return self.tau * float(np.abs(haar2d(x)).sum())
        if k == "tv-aniso":
            return self.tau * tv_norm(x, "aniso")
        if k == "tv-iso":
            return self.tau * tv_norm(x, "iso")
        return self.tau_tv * tv_norm(x[0], self.tv_variant) + self.tau_l1 * float(np.abs(x[1:]).sum())

    def prox(self, v, scale, state=None):
        """Prox of ``scale * tau * psi`` at ``v``; returns ``(x, state)``.

        ``state`` carries the TV dual variable between calls.
        """
        k = self.kind
        if k == "l1-pixel":
            return prox_l1(v, scale * self.tau), state
        if k == "l1-transform":
            return haar2d(prox_l1(haar2d(v), scale * self.tau), "inverse"), state
        if k in ("tv-aniso", "tv-iso"):
            return prox_tv_dual(v, scale * self.tau, k[3:], self.inner_iters, state)
        out = np.empty_like(v)
        out[0], state = prox_tv_dual(v[0], scale * self.tau_tv, self.tv_variant, self.inner_iters, state)
        out[1:] = prox_l1(v[1:], scale * self.tau_l1)
        return out, state
