"""Iterative Bregman projections (Dykstra form) for capacity-constrained OT.

The plan is projected in KL geometry onto the row-marginal set, the
column-marginal set and the box ``{gamma <= eta}``, cyclically.  The two
marginal sets are affine, so their projections need no correction; the box
keeps a multiplicative Dykstra correction per entry.  The iterate is a full
N x M matrix, which is the memory cost this baseline is known for.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .core import (
    ProblemInstance,
    TransportPlan,
    lift_plan,
    marginal_residuals,
    objective,
    reduce_to_upper_bounded,
    validate_feasibility,
)
from .drm import SolveReport
from .errors import InfeasibleInstanceError, SizeCapError, SolverFailure

DEFAULT_MAX_ENTRIES = 50_000_000


@dataclass(frozen=True)
class IbpConfig:
    epsilon: float = 1e-3
    max_iters: int = 100_000
    outer_tol: float = 1e-5
    max_entries: int = DEFAULT_MAX_ENTRIES
    time_limit: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0 or not self.outer_tol > 0:
            raise ValueError("epsilon and outer_tol must be positive")


@dataclass
class DykstraState:
    plan: np.ndarray
    corrections: np.ndarray
    cycle_position: int = 0

    def state_size(self) -> int:
        return self.plan.size + self.corrections.size


def gibbs_kernel(cost: np.ndarray, epsilon: float) -> np.ndarray:
    """``exp(-C / eps)`` with each row shifted by its minimum.

    Row scalings are absorbed by the first row projection, and the shift
    keeps every row's largest entry at 1 so no row underflows to all zeros.
    """
    return np.exp(-(cost - cost.min(axis=1, keepdims=True)) / epsilon)


def kl_project_rows(state: DykstraState, u: np.ndarray) -> DykstraState:
    sums = state.plan.sum(axis=1)
    zero = np.flatnonzero((sums <= 0) & (u > 0))
    if zero.size:
        raise SolverFailure(f"row {int(zero[0])} of the plan vanished", ("row", int(zero[0])))
    scale = np.divide(u, sums, out=np.zeros_like(u), where=sums > 0)
    state.plan *= scale[:, None]
    state.cycle_position = 1
    return state


def kl_project_cols(state: DykstraState, v: np.ndarray) -> DykstraState:
    sums = state.plan.sum(axis=0)
    zero = np.flatnonzero((sums <= 0) & (v > 0))
    if zero.size:
        raise SolverFailure(f"column {int(zero[0])} of the plan vanished",
                            ("column", int(zero[0])))
    scale = np.divide(v, sums, out=np.zeros_like(v), where=sums > 0)
    state.plan *= scale[None, :]
    state.cycle_position = 2
    return state


def kl_project_box(state: DykstraState, eta: np.ndarray) -> DykstraState:
    """``g~ = g * q``; ``g = min(g~, eta)``; ``q = g~ / g``."""
    tilde = state.plan * state.corrections
    new = np.minimum(tilde, eta)
    state.corrections = np.divide(tilde, new, out=np.ones_like(tilde), where=new > 0)
    state.plan = new
    state.cycle_position = 0
    return state


def ibp_solve(instance: ProblemInstance, config: IbpConfig | None = None, trace=None,
              objective_offset: float = 0.0):
    """Dykstra/IBP solve; returns ``(TransportPlan, SolveReport)``.

    Stops when the relative L1 change of the plan over one full cycle drops
    below ``outer_tol``.  On tiny grids at small epsilon the plan can sit
    still for a cycle while mass is still creeping off the diagonal, so
    check the reported residuals before trusting a short run.  A nonzero lower bound is removed first, as in
    :func:`drmcot.drm.drm_solve`.
    """
    config = config or IbpConfig()
    t_start = time.perf_counter()
    size = instance.n * instance.m
    if size > config.max_entries:
        raise SizeCapError(f"IBP needs {size} dense entries, cap is {config.max_entries}",
                           size, config.max_entries)
    feas = validate_feasibility(instance)
    if not feas.ok:
        raise InfeasibleInstanceError(f"instance infeasible: {feas.violations[:5]}",
                                      feas.violations)
    reduced, record = reduce_to_upper_bounded(instance)
    k = record.k_theta
    eps = config.epsilon * k
    offset = objective_offset
    if k != 1.0:
        offset += objective(instance.cost, TransportPlan(record.theta_snapshot.dense()))

    cost = reduced.cost.dense()
    eta = reduced.upper.dense()
    u, v = reduced.u, reduced.v
    state = DykstraState(gibbs_kernel(cost, eps), np.ones_like(cost))
    report = SolveReport(solver="ibp", epsilon=config.epsilon)

    it = 0
    while it < config.max_iters:
        prev = state.plan.copy()
        kl_project_rows(state, u)
        kl_project_cols(state, v)
        kl_project_box(state, eta)
        it += 1
        delta = float(np.abs(state.plan - prev).sum() / max(prev.sum(), 1e-300))
        report.outer_residual_history.append(delta)
        if trace is not None:
            g = state.plan
            trace({
                "iteration": it,
                "time_s": time.perf_counter() - t_start,
                "delta_outer": delta,
                "row_res": float(np.max(np.abs(g.sum(axis=1) - u))) * k,
                "col_res": float(np.max(np.abs(g.sum(axis=0) - v))) * k,
                "objective": float(np.sum(cost * g)) + offset,
            })
        if not np.isfinite(delta):
            raise SolverFailure("IBP iterate became non-finite")
        if delta <= config.outer_tol:
            report.converged = True
            report.stop_reason = "tolerance"
            break
        if config.time_limit is not None and time.perf_counter() - t_start > config.time_limit:
            report.stop_reason = "time_limit"
            break

    plan = lift_plan(TransportPlan(state.plan), record)
    report.outer_iters = it
    # plan + corrections + the previous plan kept for the stopping test
    report.state_scalars = state.state_size() + prev.size
    report.workspace_scalars = cost.size + eta.size
    report.final_row_residual, report.final_col_residual = marginal_residuals(
        plan, instance.marginals)
    report.objective = objective(instance.cost, plan)
    report.wall_time = time.perf_counter() - t_start
    return plan, report


def sinkhorn_plain(cost: np.ndarray, u: np.ndarray, v: np.ndarray, epsilon: float,
                   n_iters: int) -> np.ndarray:
    """Unconstrained Sinkhorn scaling, ``n_iters`` row-then-column updates.

    Shares the row-shifted kernel of :func:`gibbs_kernel`; used as the
    reference for the inactive-box case.
    """
    K = gibbs_kernel(np.asarray(cost, float), epsilon)
    a = np.ones(K.shape[0])
    b = np.ones(K.shape[1])
    for _ in range(n_iters):
        a = u / (K @ b)
        b = v / (K.T @ a)
    return a[:, None] * K * b[None, :]
