"""Ensemble simulation of 2D incompressible viscoresistive MHD flows.

The solver advances J flow realizations in Elsasser variables with a
decoupled two-sub-step scheme in which all members share one coefficient
matrix per sub-step, so each step costs two factorizations regardless of
the ensemble size.  Discretization: (P2)^2 / P1-discontinuous
Scott-Vogelius elements on barycentric-refined triangulations, which keep
the discrete fields pointwise divergence-free.
"""

from .ensemble import (
    EnsembleConfig,
    EnsembleState,
    MemberParams,
    elsasser_from_primitive,
    primitive_from_elsasser,
    sample_viscosities,
    viscosity_stats,
)
from .fem import FeKind, FeSpace, QuadratureRule
from .linalg import Factorization, SingularMatrixError, factorize
from .mesh import Marker, Mesh, barycentric_refine, build_step_channel, build_structured_square
from .stepper import (
    Discretization,
    Problem,
    RunReport,
    StepKind,
    advance,
    check_preconditions,
    energy,
    run,
    verify_stability_bound,
)

__all__ = [
    "Discretization",
    "EnsembleConfig",
    "EnsembleState",
    "Factorization",
    "FeKind",
    "FeSpace",
    "Marker",
    "MemberParams",
    "Mesh",
    "Problem",
    "QuadratureRule",
    "RunReport",
    "SingularMatrixError",
    "StepKind",
    "advance",
    "barycentric_refine",
    "build_step_channel",
    "build_structured_square",
    "check_preconditions",
    "elsasser_from_primitive",
    "energy",
    "factorize",
    "primitive_from_elsasser",
    "run",
    "sample_viscosities",
    "verify_stability_bound",
    "viscosity_stats",
]

__version__ = "0.1.0"
