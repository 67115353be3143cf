"""Coded-aperture compressive imaging: masks, FFT sensing operators,
mean-subtraction preconditioning, sparse reconstruction and RIP checks."""

from .core import (
    CakeError,
    CapacityError,
    DegenerateError,
    DomainError,
    MetricsRecord,
    NumericalFailureError,
    ShapeError,
    UnsupportedParameterError,
    make_phantom,
    make_rng,
    make_video_phantom,
    rmse,
    trial_seed,
)
from .masks import MaskPattern, MaskSequence, gen_mask, gen_mask_sequence, to_implementable
from .operators import CakeOperator, Circulant, Downsampler, LinearOperator, Sensing, materialize
from .precond import BlockPreconditionedSystem, PreconditionedSystem, precondition
from .solvers import Penalty, ReconResult, SolverConfig, solve, solve_video

__version__ = "0.1.0"

__all__ = [
    "BlockPreconditionedSystem",
    "CakeError",
    "CakeOperator",
    "CapacityError",
    "Circulant",
    "DegenerateError",
    "DomainError",
    "Downsampler",
    "LinearOperator",
    "MaskPattern",
    "MaskSequence",
    "MetricsRecord",
    "NumericalFailureError",
    "Penalty",
    "PreconditionedSystem",
    "ReconResult",
    "Sensing",
    "ShapeError",
    "SolverConfig",
    "UnsupportedParameterError",
    "gen_mask",
    "gen_mask_sequence",
    "make_phantom",
    "make_rng",
    "make_video_phantom",
    "materialize",
    "precondition",
    "rmse",
    "solve",
    "solve_video",
    "to_implementable",
    "trial_seed",
]
