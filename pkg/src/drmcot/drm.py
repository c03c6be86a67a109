"""Double regularization solver for capacity-constrained OT.

The regularized problem

    min  <C, g> + eps <g, ln g> + eps <eta - g, ln(eta - g)>
    s.t. g 1 = u,  g^T 1 = v

has the optimal plan ``g_ij = eta_ij p_ij / (1 + p_ij)`` with
``p_ij = phi_i K_ij psi_j`` and ``K = exp(-C / eps)``.  The scalings solve

    g_i(phi_i) = sum_j eta_ij / (1 + phi_i K_ij psi_j) - sum_j eta_ij + u_i = 0
    f_j(psi_j) = sum_i eta_ij / (1 + phi_i K_ij psi_j) - sum_i eta_ij + v_j = 0

each of which is strictly decreasing in its single unknown.  The solver
alternates a row half-sweep (all ``phi_i`` with ``psi`` frozen) and a column
half-sweep, each root found by safeguarded Newton.

Only ``phi``, ``psi`` and the absorbed offsets ``alpha``, ``beta`` persist
between iterations.  Kernel, bound and cost entries are produced block by
block and thrown away.  With stabilization on, large or tiny scalings are
folded into the offsets and the kernel is read as
``exp((alpha_i + beta_j - C_ij) / eps)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import expit

from .core import (
    CapacityBounds,
    DenseBound,
    ProblemInstance,
    ReductionRecord,
    TransportPlan,
    lift_plan,
    marginal_residuals,
    objective,
    reduce_to_upper_bounded,
    validate_feasibility,
)
from .errors import (
    DegenerateInstanceError,
    InfeasibleInstanceError,
    KernelUnderflowError,
    SolverFailure,
)
from .newton import NewtonFailure, solve_log_roots

BOUNDARY_MARGIN = 1e-10
# exp() stays finite and nonzero inside this window
_LOG_MAX = np.log(np.finfo(float).max)
_LOG_MIN = np.log(np.finfo(float).tiny)


@dataclass(frozen=True)
class DrmConfig:
    epsilon: float = 1e-3
    max_outer_iters: int = 100_000
    outer_tol: float = 1e-5
    newton_tol: float = 1e-5
    newton_max_iters: int = 100
    stabilization_threshold: float = 1e20
    stabilization_enabled: bool = True
    residual_floor: float = 1e-12  # |g| <= residual_floor * max(u) also stops Newton
    block_elements: int = 1 << 18
    time_limit: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not (self.outer_tol > 0 and self.newton_tol > 0):
            raise ValueError("tolerances must be positive")
        if not self.stabilization_threshold > 1:
            raise ValueError("stabilization threshold must exceed 1")
        if self.max_outer_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass(frozen=True)
class DualPotentials:
    """Scalings ``phi``, ``psi`` and the offsets absorbed into the kernel.

    Rows or columns with zero mass carry a zero scaling; every other entry
    is strictly positive.
    """

    phi: np.ndarray
    psi: np.ndarray
    alpha_abs: np.ndarray
    beta_abs: np.ndarray

    @classmethod
    def initial(cls, n: int, m: int) -> "DualPotentials":
        return cls(np.full(n, 1.0 / n), np.full(m, 1.0 / m), np.zeros(n), np.zeros(m))

    def state_size(self) -> int:
        return self.phi.size + self.psi.size + self.alpha_abs.size + self.beta_abs.size


@dataclass
class SolveReport:
    solver: str
    epsilon: float
    outer_iters: int = 0
    converged: bool = False
    stop_reason: str = "maxiter"
    outer_residual_history: list = field(default_factory=list)
    total_newton_iters: int = 0
    wall_time: float = 0.0
    final_row_residual: float = float("nan")
    final_col_residual: float = float("nan")
    objective: float = float("nan")
    state_scalars: int = 0
    workspace_scalars: int = 0
    stabilizations: int = 0

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["outer_residual_history"] = [float(x) for x in self.outer_residual_history]
        return d


# ------------------------------------------------------------ scalar pieces


def kernel_entry(cost, i: int, j: int, epsilon: float) -> float:
    return float(np.exp(-cost.entry(i, j) / epsilon))


def _row_logits(instance, i, phi_i, psi, epsilon, alpha_i, beta):
    c = instance.cost.block(np.array([i]))[0]
    eta = instance.upper.block(np.array([i]))[0]
    with np.errstate(divide="ignore"):
        z = np.log(phi_i) + np.log(psi) + (alpha_i + beta - c) / epsilon
    return z, eta


def _col_logits(instance, j, psi_j, phi, epsilon, beta_j, alpha):
    c = instance.cost.block(None, np.array([j]))[:, 0]
    eta = instance.upper.block(None, np.array([j]))[:, 0]
    with np.errstate(divide="ignore"):
        z = np.log(psi_j) + np.log(phi) + (alpha + beta_j - c) / epsilon
    return z, eta


def g_eval(i, phi_i, psi, instance, epsilon, alpha_abs=None, beta_abs=None) -> float:
    """Row function ``g_i`` at ``phi_i`` (offsets default to zero)."""
    alpha_i = 0.0 if alpha_abs is None else alpha_abs[i]
    beta = np.zeros(instance.m) if beta_abs is None else beta_abs
    z, eta = _row_logits(instance, i, phi_i, np.asarray(psi, float), epsilon, alpha_i, beta)
    return float(instance.u[i] - np.sum(eta * expit(z)))


def g_derivative(i, phi_i, psi, instance, epsilon, alpha_abs=None, beta_abs=None) -> float:
    """``-sum_j eta_ij K_ij psi_j / (1 + phi_i K_ij psi_j)**2``."""
    alpha_i = 0.0 if alpha_abs is None else alpha_abs[i]
    beta = np.zeros(instance.m) if beta_abs is None else beta_abs
    z, eta = _row_logits(instance, i, phi_i, np.asarray(psi, float), epsilon, alpha_i, beta)
    return float(-np.sum(eta * expit(z) * expit(-z)) / phi_i)


def f_eval(j, psi_j, phi, instance, epsilon, alpha_abs=None, beta_abs=None) -> float:
    alpha = np.zeros(instance.n) if alpha_abs is None else alpha_abs
    beta_j = 0.0 if beta_abs is None else beta_abs[j]
    z, eta = _col_logits(instance, j, psi_j, np.asarray(phi, float), epsilon, beta_j, alpha)
    return float(instance.v[j] - np.sum(eta * expit(z)))


def f_derivative(j, psi_j, phi, instance, epsilon, alpha_abs=None, beta_abs=None) -> float:
    alpha = np.zeros(instance.n) if alpha_abs is None else alpha_abs
    beta_j = 0.0 if beta_abs is None else beta_abs[j]
    z, eta = _col_logits(instance, j, psi_j, np.asarray(phi, float), epsilon, beta_j, alpha)
    return float(-np.sum(eta * expit(z) * expit(-z)) / psi_j)


# ----------------------------------------------------------- block helpers


def _block_len(config: DrmConfig, width: int) -> int:
    return max(1, config.block_elements // max(width, 1))


def _log_kernel_rows(instance, rows, duals, epsilon, stabilized):
    """``ln(K~_ij psi_j)`` for the given rows, all columns."""
    cost = instance.cost.block(rows)
    with np.errstate(divide="ignore"):
        log_psi = np.log(duals.psi)
        if stabilized:
            return (duals.alpha_abs[rows, None] + duals.beta_abs[None, :] - cost) / epsilon \
                + log_psi[None, :]
        return np.log(np.exp(-cost / epsilon) * duals.psi[None, :])


def _log_kernel_cols(instance, cols, duals, epsilon, stabilized):
    """``ln(phi_i K~_ij)`` for the given columns, laid out (cols, rows)."""
    cost = instance.cost.block(None, cols).T
    with np.errstate(divide="ignore"):
        log_phi = np.log(duals.phi)
        if stabilized:
            return (duals.beta_abs[cols, None] + duals.alpha_abs[None, :] - cost) / epsilon \
                + log_phi[None, :]
        return np.log(np.exp(-cost / epsilon) * duals.phi[None, :])


def _sweep(logk_fn, eta_fn, mass, scal, width, config, label, stabilized):
    """Solve every 1-D equation on one side; returns new log scalings and eval count."""
    size = mass.size
    with np.errstate(divide="ignore"):
        t_all = np.log(scal)
    out = np.full(size, -np.inf)
    floor = config.residual_floor * float(mass.max())
    evals = 0
    step = _block_len(config, width)
    for start in range(0, size, step):
        idx = np.arange(start, min(size, start + step))
        live = idx[mass[idx] > 0]
        if live.size == 0:
            continue
        logk = logk_fn(live)
        eta = eta_fn(live)
        target = mass[live]
        # entries whose kernel underflowed to 0 can carry no mass at any scaling
        reachable = np.sum(np.where(np.isfinite(logk), eta, 0.0), axis=1)
        dead = reachable <= target
        if np.any(dead):
            bad = int(live[np.flatnonzero(dead)[0]])
            raise KernelUnderflowError(
                f"kernel underflow: the nonzero kernel entries of {label} {bad} cannot carry "
                f"its mass; enable stabilization or increase epsilon")
        t0 = t_all[live]
        t0 = np.where(np.isfinite(t0), t0, 0.0)

        def evaluate(t, sub, logk=logk, eta=eta, target=target):
            z = logk[sub] + t[:, None]
            s = expit(z)
            e = eta[sub]
            return target[sub] - np.sum(e * s, axis=1), -np.sum(e * s * (1.0 - s), axis=1)

        try:
            roots, n_eval = solve_log_roots(evaluate, t0, tol=config.newton_tol,
                                            max_iter=config.newton_max_iters, abs_floor=floor)
        except NewtonFailure as exc:
            where = [int(live[k]) for k in exc.indices]
            raise SolverFailure(f"{exc} ({label}s {where[:10]})", location=(label, where)) \
                from exc
        out[live] = roots
        evals += n_eval
    return out, evals


def _store_scalings(log_s, offsets, config, label):
    """Turn log scalings into (scalings, offsets), absorbing when out of range."""
    live = np.isfinite(log_s)
    eps = config.epsilon
    if config.stabilization_enabled:
        limit = np.log(config.stabilization_threshold)
        if np.any(np.abs(log_s[live]) > limit):
            new_off = offsets.copy()
            new_off[live] += eps * log_s[live]
            return np.where(live, 1.0, 0.0), new_off, True
        return np.where(live, np.exp(np.where(live, log_s, 0.0)), 0.0), offsets, False
    if np.any(log_s[live] > _LOG_MAX) or np.any(log_s[live] < _LOG_MIN):
        raise KernelUnderflowError(
            f"{label} scalings left the floating-point range "
            f"(|ln| up to {np.max(np.abs(log_s[live])):.1f}); enable stabilization")
    return np.where(live, np.exp(np.where(live, log_s, 0.0)), 0.0), offsets, False


def half_sweep_rows(duals: DualPotentials, instance: ProblemInstance, config: DrmConfig):
    """Replace every ``phi_i`` by the root of ``g_i`` with ``psi`` frozen.

    Returns ``(duals, newton_evaluations)``.
    """
    eps = config.epsilon
    stab = config.stabilization_enabled
    log_phi, evals = _sweep(
        lambda rows: _log_kernel_rows(instance, rows, duals, eps, stab),
        lambda rows: instance.upper.block(rows),
        instance.u, duals.phi, instance.m, config, "row", stab)
    phi, alpha, _ = _store_scalings(log_phi, duals.alpha_abs, config, "row")
    return replace(duals, phi=phi, alpha_abs=alpha), evals


def half_sweep_cols(duals: DualPotentials, instance: ProblemInstance, config: DrmConfig):
    """Replace every ``psi_j`` by the root of ``f_j`` with ``phi`` frozen."""
    eps = config.epsilon
    stab = config.stabilization_enabled
    log_psi, evals = _sweep(
        lambda cols: _log_kernel_cols(instance, cols, duals, eps, stab),
        lambda cols: instance.upper.block(None, cols).T,
        instance.v, duals.psi, instance.n, config, "column", stab)
    psi, beta, _ = _store_scalings(log_psi, duals.beta_abs, config, "column")
    return replace(duals, psi=psi, beta_abs=beta), evals


def needs_stabilization(duals: DualPotentials, config: DrmConfig) -> bool:
    if not config.stabilization_enabled:
        return False
    tau = config.stabilization_threshold
    for s in (duals.phi, duals.psi):
        live = s[s > 0]
        if live.size and (live.max() > tau or live.min() < 1.0 / tau):
            return True
    return False


def stabilize(duals: DualPotentials, config: DrmConfig) -> DualPotentials:
    """Fold ``eps ln phi`` and ``eps ln psi`` into the offsets and reset the scalings to 1."""
    eps = config.epsilon

    def fold(s, off):
        live = s > 0
        off = off.copy()
        off[live] += eps * np.log(s[live])
        return np.where(live, 1.0, 0.0), off

    phi, alpha = fold(duals.phi, duals.alpha_abs)
    psi, beta = fold(duals.psi, duals.beta_abs)
    return DualPotentials(phi, psi, alpha, beta)


def _plan_rows(duals, instance, epsilon, rows):
    cost = instance.cost.block(rows)
    with np.errstate(divide="ignore"):
        z = (np.log(duals.phi[rows])[:, None] + np.log(duals.psi)[None, :]
             + (duals.alpha_abs[rows, None] + duals.beta_abs[None, :] - cost) / epsilon)
    return instance.upper.block(rows) * expit(z), cost


def recover_plan(duals: DualPotentials, instance: ProblemInstance, epsilon: float,
                 block_elements: int = 1 << 18) -> TransportPlan:
    """``gamma_ij = eta_ij p_ij / (1 + p_ij)``; lies in ``[0, eta]`` by construction."""
    n, m = instance.n, instance.m
    gamma = np.empty((n, m))
    step = max(1, block_elements // max(m, 1))
    for start in range(0, n, step):
        rows = np.arange(start, min(n, start + step))
        gamma[rows], _ = _plan_rows(duals, instance, epsilon, rows)
    return TransportPlan(gamma)


def plan_statistics(duals, instance, epsilon, block_elements=1 << 18):
    """Row sums, column sums and objective of the implied plan, in O(N + M) memory."""
    n, m = instance.n, instance.m
    rs = np.zeros(n)
    cs = np.zeros(m)
    obj = 0.0
    step = max(1, block_elements // max(m, 1))
    for start in range(0, n, step):
        rows = np.arange(start, min(n, start + step))
        g, cost = _plan_rows(duals, instance, epsilon, rows)
        rs[rows] = g.sum(axis=1)
        cs += g.sum(axis=0)
        obj += float(np.sum(g * cost))
    return rs, cs, obj


def _potentials(duals, epsilon):
    with np.errstate(divide="ignore"):
        a = duals.alpha_abs + epsilon * np.log(duals.phi)
        b = duals.beta_abs + epsilon * np.log(duals.psi)
    return a, b


def _rel_change(new, old, epsilon):
    """``||s_new - s_old||_1 / ||s_old||_1`` for the effective scalings ``s = exp(a / eps)``.

    Evaluated from the potentials ``a`` without forming ``s``: weights are
    rescaled by the largest scaling and the exponent of the ratio is capped.
    """
    live = np.isfinite(new) & np.isfinite(old)
    o, n = old[live], new[live]
    if o.size == 0:
        return 0.0
    w = np.exp((o - o.max()) / epsilon)
    ratio = np.expm1(np.clip((n - o) / epsilon, -700.0, 700.0))
    return float(np.sum(w * np.abs(ratio)) / np.sum(w))


def _boundary(instance):
    """Rows and columns whose mass reaches ``(1 - BOUNDARY_MARGIN)`` of their capacity."""
    out = []
    for mass, cap in ((instance.u, instance.upper.row_sums()),
                      (instance.v, instance.upper.col_sums())):
        out.append(np.flatnonzero((mass > 0) & (mass >= (1.0 - BOUNDARY_MARGIN) * cap)))
    return out


def _pin_boundary(instance, record):
    """Fix rows/columns sitting on their capacity and reduce them away.

    Such a row has no finite dual root, but its plan is forced:
    ``gamma_i. = eta_i.`` (rescaled to the exact mass).  The forced entries
    become a lower bound and go through the same reduction as ``theta``.
    Returns ``(instance, record, forced)``; ``forced`` is True when the
    pinned entries already carry all the mass.
    """
    for _ in range(instance.n + instance.m):
        rows, cols = _boundary(instance)
        if rows.size == 0 and cols.size == 0:
            return instance, record, False
        theta = np.zeros((instance.n, instance.m))
        if rows.size:
            eta = instance.upper.block(rows)
            theta[rows] = eta * (instance.u[rows] / eta.sum(axis=1))[:, None]
        if cols.size:
            eta = instance.upper.block(None, cols)
            theta[:, cols] = np.maximum(theta[:, cols],
                                        eta * (instance.v[cols] / eta.sum(axis=0))[None, :])
        pinned = ProblemInstance(instance.cost, instance.marginals,
                                 CapacityBounds(DenseBound(np.minimum(theta, instance.upper.dense())),
                                                instance.upper))
        k_prev, theta_prev = record.k_theta, record.theta_snapshot.dense()
        mass = pinned.lower.total()
        if mass >= 1.0 - BOUNDARY_MARGIN:
            lifted = k_prev * pinned.lower.dense() + theta_prev
            return instance, ReductionRecord(k_prev, DenseBound(lifted)), True
        feas = validate_feasibility(pinned, tol=1e-9)
        if not feas.ok:
            raise DegenerateInstanceError(
                f"rows {rows[:5].tolist()} / columns {cols[:5].tolist()} sit on their "
                f"capacity and the forced plan leaves the rest infeasible")
        instance, rec = reduce_to_upper_bounded(pinned)
        # gamma = k_prev (k gamma'' + theta'') + theta_prev
        record = ReductionRecord(k_prev * rec.k_theta,
                                 DenseBound(k_prev * rec.theta_snapshot.dense() + theta_prev))
    raise DegenerateInstanceError("capacity pinning did not settle")


class DrmSolver:
    """Iteration state of one solve.  Holds O(N + M) numbers."""

    def __init__(self, instance: ProblemInstance, config: DrmConfig):
        self.instance = instance
        self.config = config
        n, m = instance.n, instance.m
        d = DualPotentials.initial(n, m)
        d = replace(d, phi=np.where(instance.u > 0, d.phi, 0.0),
                    psi=np.where(instance.v > 0, d.psi, 0.0))
        self.duals = d
        self.prev_a, self.prev_b = _potentials(d, config.epsilon)
        self.iteration = 0
        self.newton_evals = 0
        self.stabilizations = 0

    def state_size(self) -> int:
        """Scalars kept alive between iterations (vectors plus 4 counters)."""
        return self.duals.state_size() + self.prev_a.size + self.prev_b.size + 4

    def workspace_size(self) -> int:
        """Upper bound on the transient block buffers of one half-sweep."""
        c = self.config
        n, m = self.instance.n, self.instance.m
        return max(_block_len(c, m) * m, _block_len(c, n) * n)

    def step(self) -> float:
        cfg = self.config
        before = self.duals
        self.duals, e1 = half_sweep_rows(self.duals, self.instance, cfg)
        self.duals, e2 = half_sweep_cols(self.duals, self.instance, cfg)
        self.newton_evals += e1 + e2
        # a sweep that folded its scalings into the offsets hands back new offset arrays
        self.stabilizations += (self.duals.alpha_abs is not before.alpha_abs) \
            + (self.duals.beta_abs is not before.beta_abs)
        if needs_stabilization(self.duals, cfg):
            self.duals = stabilize(self.duals, cfg)
            self.stabilizations += 1
        a, b = _potentials(self.duals, cfg.epsilon)
        delta = max(_rel_change(a, self.prev_a, cfg.epsilon),
                    _rel_change(b, self.prev_b, cfg.epsilon))
        self.prev_a, self.prev_b = a, b
        self.iteration += 1
        return delta


TraceFn = Callable[[dict], None]


def _forced_result(instance, record, config, t_start):
    plan = TransportPlan(record.theta_snapshot.dense())
    report = SolveReport(solver="drm", epsilon=config.epsilon, converged=True,
                         stop_reason="forced", state_scalars=0)
    report.final_row_residual, report.final_col_residual = marginal_residuals(
        plan, instance.marginals)
    report.objective = objective(instance.cost, plan)
    report.wall_time = time.perf_counter() - t_start
    return plan, report


def drm_solve(instance: ProblemInstance, config: DrmConfig | None = None,
              trace: TraceFn | None = None, objective_offset: float = 0.0):
    """Solve a capacity-constrained OT instance by double regularization.

    A nonzero lower bound is removed first (cost and epsilon both scale by
    ``k = 1 - sum(theta)``, so the kernel is unchanged) and the plan is
    lifted back before returning.  Rows or columns whose mass equals their
    capacity have a forced plan; they are fixed and removed the same way.

    Parameters
    ----------
    instance : ProblemInstance
    config : DrmConfig, optional
    trace : callable, optional
        Receives one dict per outer iteration with keys ``iteration``,
        ``time_s``, ``delta_outer``, ``row_res``, ``col_res`` and
        ``objective``.  Tracing costs an extra pass over the plan per
        iteration.

    Returns
    -------
    plan : TransportPlan
    report : SolveReport
    """
    config = config or DrmConfig()
    t_start = time.perf_counter()
    feas = validate_feasibility(instance)
    if not feas.ok:
        raise InfeasibleInstanceError(f"instance infeasible: {feas.violations[:5]}",
                                      feas.violations)
    reduced, record = reduce_to_upper_bounded(instance)
    reduced, record, forced = _pin_boundary(reduced, record)
    if forced:
        return _forced_result(instance, record, config, t_start)
    eps = config.epsilon * record.k_theta
    cfg = replace(config, epsilon=eps)

    # objective of the lifted plan = <C', g'> + <C, theta>
    offset = objective_offset
    if record.k_theta != 1.0:
        offset += objective(instance.cost, TransportPlan(record.theta_snapshot.dense()))

    solver = DrmSolver(reduced, cfg)
    report = SolveReport(solver="drm", epsilon=config.epsilon)
    while solver.iteration < cfg.max_outer_iters:
        delta = solver.step()
        report.outer_residual_history.append(delta)
        if trace is not None:
            rs, cs, obj = plan_statistics(solver.duals, reduced, eps, cfg.block_elements)
            scale = record.k_theta
            trace({
                "iteration": solver.iteration,
                "time_s": time.perf_counter() - t_start,
                "delta_outer": delta,
                "row_res": float(np.max(np.abs(rs - reduced.u))) * scale,
                "col_res": float(np.max(np.abs(cs - reduced.v))) * scale,
                "objective": obj + offset,
            })
        if delta <= cfg.outer_tol:
            report.converged = True
            report.stop_reason = "tolerance"
            break
        if cfg.time_limit is not None and time.perf_counter() - t_start > cfg.time_limit:
            report.stop_reason = "time_limit"
            break

    plan = lift_plan(recover_plan(solver.duals, reduced, eps, cfg.block_elements), record)
    report.outer_iters = solver.iteration
    report.total_newton_iters = solver.newton_evals
    report.stabilizations = solver.stabilizations
    report.state_scalars = solver.state_size()
    report.workspace_scalars = solver.workspace_size()
    report.final_row_residual, report.final_col_residual = marginal_residuals(
        plan, instance.marginals)
    report.objective = objective(instance.cost, plan)
    report.wall_time = time.perf_counter() - t_start
    return plan, report
