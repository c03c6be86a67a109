"""Capacity-constrained optimal transport: double regularization solver,
Bregman-projection baseline, exact LP oracle and benchmark harness."""

from .core import (
    CapacityBounds,
    DenseBound,
    DenseCost,
    Grid1DCost,
    Grid2DCost,
    Marginals,
    ProblemInstance,
    RankOnePlusDenseBound,
    ReductionRecord,
    TransportPlan,
    UniformBound,
    lift_plan,
    marginal_residuals,
    objective,
    reduce_to_upper_bounded,
    regularized_objective,
    validate_feasibility,
)
from .drm import DrmConfig, DualPotentials, SolveReport, drm_solve

__version__ = "0.1.0"
