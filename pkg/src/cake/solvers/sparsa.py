"""Proximal-gradient reconstruction with Barzilai-Borwein steps.

Each iteration takes ``f+ = prox_{tau/alpha}(f - grad/alpha)`` where
``grad = A^T (A f - y)`` and ``alpha`` comes from the BB curvature estimate
``||A df||^2 / ||df||^2``.  A step is accepted only if the objective does not
increase; otherwise ``alpha`` is doubled and the step retried, so objective
traces are monotone.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..core import NumericalFailureError, ShapeError
from ..operators import FrameCumsum, FrameTransform, LinearOperator
from ..precond import BlockPreconditionedSystem, PreconditionedSystem, estimate_signal_mean, recompose
from .prox import Penalty

log = logging.getLogger(__name__)


@dataclass
class SolverConfig:
    max_iterations: int = 2000
    tol: float = 1e-3
    inner_iters: int = 20
    cg_iters: int = 10
    init: str = "cg"  # "cg" or "zero"
    min_iterations: int = 5
    max_backtracks: int = 40
    alpha_min: float = 1e-30
    alpha_max: float = 1e30
    seed: int = 0

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class ReconResult:
    estimate: np.ndarray
    objective: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    coefficients: np.ndarray | None = None
    mean: float | None = None


def _dot(a, b):
    return float(np.vdot(a.ravel(), b.ravel()))


def cg_least_squares(A, y, iters, x0=None, return_history=False, rtol=1e-10):
    """Conjugate gradients on the normal equations (CGLS), started at zero.

    Stops early once ``||A^T r||`` falls below ``rtol`` times its initial
    value; continuing past that point only amplifies rounding error.
    ``return_history`` also returns the residual norms ``||A x_k - y||``;
    they never increase.
    """
    y = np.asarray(y, dtype=np.float64)
    x = np.zeros(A.in_shape) if x0 is None else np.array(x0, dtype=np.float64)
    r = y - A.apply(x)
    s = A.adjoint(r)
    p = s.copy()
    gamma = _dot(s, s)
    floor = (rtol**2) * gamma
    history = [float(np.linalg.norm(r))]
    for _ in range(int(iters)):
        if gamma <= floor or gamma == 0:
            break
        q = A.apply(p)
        qq = _dot(q, q)
        if qq == 0:
            break
        a = gamma / qq
        x += a * p
        r -= a * q
        s = A.adjoint(r)
        gamma_new = _dot(s, s)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
        history.append(float(np.linalg.norm(r)))
    return (x, history) if return_history else x


def data_gradient(A, y, f):
    """Gradient of ``0.5 ||A f - y||^2``."""
    return A.adjoint(A.apply(f) - y)


def _objective(r, penalty, f):
    return 0.5 * _dot(r, r) + penalty.value(f)


def _proximal_gradient(A, y, penalty, config, f, offset=0.0):
    # ``offset`` is added back to the iterate when measuring relative change,
    # so zero-mean variables are judged by the change in the recomposed image
    r = A.apply(f) - y
    obj = _objective(r, penalty, f)
    trace = [obj]
    if not np.isfinite(obj):
        raise NumericalFailureError("non-finite initial objective", trace)
    grad = A.adjoint(r)
    Ag = A.apply(grad)
    gg = _dot(grad, grad)
    alpha = _dot(Ag, Ag) / gg if gg > 0 else 1.0
    alpha = min(config.alpha_max, max(config.alpha_min, alpha))
    state = None
    converged = False
    it = 0
    for it in range(1, config.max_iterations + 1):
        for _ in range(config.max_backtracks):
            f_new, new_state = penalty.prox(f - grad / alpha, 1.0 / alpha, state)
            r_new = A.apply(f_new) - y
            obj_new = _objective(r_new, penalty, f_new)
            if not np.isfinite(obj_new):
                raise NumericalFailureError(f"non-finite objective at iteration {it}", trace)
            if obj_new <= obj:
                break
            alpha = min(config.alpha_max, 2.0 * alpha)
        else:
            # no decrease available at any step length: stationary to working precision
            converged = True
            break
        df = f_new - f
        Adf = r_new - r
        dd = _dot(df, df)
        f, r, obj, state = f_new, r_new, obj_new, new_state
        trace.append(obj)
        scale = np.linalg.norm((f + offset).ravel())
        change = np.sqrt(dd) / scale if scale > 0 else np.inf
        if dd == 0 or (it >= config.min_iterations and change < config.tol):
            converged = True
            break
        alpha = min(config.alpha_max, max(config.alpha_min, _dot(Adf, Adf) / dd))
        grad = A.adjoint(r)
    log.debug("proximal gradient: %d iterations, objective %.6g", it, obj)
    return f, trace, it, converged


def _penalty_with_inner(penalty, config):
    if penalty.inner_iters == config.inner_iters:
        return penalty
    return replace(penalty, inner_iters=config.inner_iters)


def solve(A, y, penalty, config=None, x0=None):
    """Minimise ``0.5 ||A f - y||^2 + penalty(f)``.

    ``A`` may be a :class:`PreconditionedSystem`; then the problem is solved
    in zero-mean variables against the zero-mean data and the estimated
    signal mean is added back to the result (``y`` is ignored).
    """
    config = config or SolverConfig()
    penalty = _penalty_with_inner(penalty, config)
    sys = A if isinstance(A, PreconditionedSystem) else None
    if sys is not None:
        op, data = sys.A0, sys.y0
    else:
        op, data = A, np.asarray(y, dtype=np.float64)
    if data.shape != op.out_shape:
        raise ShapeError(f"data shape {data.shape} does not match operator output {op.out_shape}")
    if x0 is not None:
        f = np.array(x0, dtype=np.float64)
        if f.shape != op.in_shape:
            raise ShapeError(f"initial point shape {f.shape} != {op.in_shape}")
    elif config.init == "cg":
        f = cg_least_squares(op, data, config.cg_iters)
    else:
        f = np.zeros(op.in_shape)
    mean = estimate_signal_mean(sys) if sys is not None else None
    f, trace, it, converged = _proximal_gradient(op, data, penalty, config, f, mean or 0.0)
    if sys is not None:
        estimate = recompose(f, mean)
    else:
        estimate = f
    return ReconResult(estimate, trace, it, converged, f, mean)


def frame_inverse_operator(W, shape):
    """``(W^-1 ⊗ I)`` for a temporal transform; ``None`` means frame differencing."""
    if W is None:
        return FrameCumsum(shape)
    return FrameTransform(np.linalg.inv(np.asarray(W, dtype=np.float64)), shape[1:])


def solve_video(A, y, tau_tv, tau_l1, W=None, config=None, x0=None, precondition=True, tv_variant="iso"):
    """Recover a video from keyed-exposure data through temporal coefficients.

    ``A`` senses frames ``f`` (shape ``(N, n1, n2)``).  The unknown is
    ``theta = (W ⊗ I) f``; the default ``W`` is frame differencing, so
    ``theta`` holds the first frame followed by the difference frames.  The
    first coefficient frame is TV-penalised, the rest are ``l1``-penalised,
    and the estimate is mapped back by ``W^-1`` (a running sum for
    differencing).  ``x0`` warm-starts ``theta``, e.g. from the previous
    block's solution.  With ``precondition`` the means are removed per
    exposure block and ``ReconResult.mean`` holds the per-block estimates.
    """
    config = config or SolverConfig(init="zero")
    if not isinstance(A, LinearOperator) or len(A.in_shape) != 3:
        raise ShapeError("video solve needs an operator on (N, n1, n2) frame stacks")
    inv = frame_inverse_operator(W, A.in_shape)
    penalty = Penalty("video-composite", tau_tv=tau_tv, tau_l1=tau_l1, tv_variant=tv_variant,
                      inner_iters=config.inner_iters)
    y = np.asarray(y, dtype=np.float64)
    if precondition:
        # each observed frame only sees its own block, so subtract means block by block
        B = getattr(A, "B", A.in_shape[0])
        sys = BlockPreconditionedSystem(A, y, B)
        op, data = sys.A0 @ inv, sys.y0
    else:
        sys = None
        op, data = A @ inv, y
    if data.shape != op.out_shape:
        raise ShapeError(f"data shape {data.shape} does not match operator output {op.out_shape}")
    if x0 is not None:
        theta = np.array(x0, dtype=np.float64)
    elif config.init == "cg":
        theta = cg_least_squares(op, data, config.cg_iters)
    else:
        theta = np.zeros(op.in_shape)
    mean = sys.mean_video() if sys is not None else None
    offset = 0.0
    if mean is not None:
        # the recomposed means expressed as temporal coefficients
        if W is None:
            offset = np.diff(mean, axis=0, prepend=0.0)
        else:
            offset = FrameTransform(np.asarray(W, dtype=np.float64), A.in_shape[1:]).apply(mean)
    theta, trace, it, converged = _proximal_gradient(op, data, penalty, config, theta, offset)
    f = inv.apply(theta)
    if sys is not None:
        f = f + mean
    block_means = sys.signal_means() if sys is not None else None
    return ReconResult(f, trace, it, converged, theta, block_means)
