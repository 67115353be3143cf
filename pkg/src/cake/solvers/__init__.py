from .prox import PENALTY_KINDS, Penalty, grad2, grad2_adjoint, prox_l1, prox_tv, prox_tv_dual, tv_norm
from .sparsa import (
    ReconResult,
    SolverConfig,
    cg_least_squares,
    data_gradient,
    frame_inverse_operator,
    solve,
    solve_video,
)
from .transforms import haar2d, haar_levels

__all__ = [
    "PENALTY_KINDS",
    "Penalty",
    "ReconResult",
    "SolverConfig",
    "cg_least_squares",
    "data_gradient",
    "frame_inverse_operator",
    "grad2",
    "grad2_adjoint",
    "haar2d",
    "haar_levels",
    "prox_l1",
    "prox_tv",
    "prox_tv_dual",
    "solve",
    "solve_video",
    "tv_norm",
]
