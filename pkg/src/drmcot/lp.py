"""Exact LP oracle for desk-scale instances and the relative-error metric.

The LP ``min <C, g>`` over ``theta <= g <= eta`` with both marginal
constraints is handed to the HiGHS dual simplex, which returns a basic
optimal solution deterministically.  Optimality is not taken on trust: the
row/column duals are used to build a dual-feasible point and the duality
gap is checked against :data:`GAP_TOL`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .core import ProblemInstance, TransportPlan, objective, validate_feasibility
from .errors import InfeasibleInstanceError, SizeCapError, SolverFailure

DEFAULT_LP_CAP = 10_000
GAP_TOL = 1e-9
FEAS_TOL = 1e-9


@dataclass(frozen=True)
class LpSolution:
    plan: TransportPlan | None
    objective: float
    status: str  # optimal | infeasible | iteration-limit
    duality_gap: float = float("nan")
    row_duals: np.ndarray | None = None
    col_duals: np.ndarray | None = None
    iterations: int = 0


class AbsoluteGapWarning(UserWarning):
    """The oracle objective is zero, so the absolute gap was returned."""


def _constraints(n: int, m: int):
    rows = sp.kron(sp.identity(n, format="csr"), np.ones((1, m)), format="csr")
    cols = sp.kron(np.ones((1, n)), sp.identity(m, format="csr"), format="csr")
    return sp.vstack([rows, cols], format="csr")


def infeasibility_cut(instance: ProblemInstance):
    """Rows and columns on the source side of a deficient minimum cut, or None.

    The cut is found as a minimum cut of the bipartite flow network
    ``source -u_i-> i -(eta_ij - theta_ij)-> j -v_j-> sink`` on the
    lower-bound-free problem: when the maximum flow falls short of the
    total mass, the source side of a minimum cut is a Farkas certificate.
    """
    import networkx as nx

    from .core import reduce_to_upper_bounded

    try:
        red, _ = reduce_to_upper_bounded(instance)
    except ValueError:
        return None
    u, v = red.u, red.v
    if np.any(u < -FEAS_TOL) or np.any(v < -FEAS_TOL):
        return None
    eta = red.upper.dense()
    g = nx.DiGraph()
    for i in range(red.n):
        g.add_edge("s", ("r", i), capacity=max(float(u[i]), 0.0))
        for j in np.flatnonzero(eta[i] > 0):
            g.add_edge(("r", i), ("c", int(j)), capacity=float(eta[i, j]))
    for j in range(red.m):
        g.add_edge(("c", j), "t", capacity=max(float(v[j]), 0.0))
    value, (side, _) = nx.minimum_cut(g, "s", "t")
    if value >= float(u.sum()) - FEAS_TOL:
        return None
    rows = sorted(x[1] for x in side if isinstance(x, tuple) and x[0] == "r")
    cols = sorted(x[1] for x in side if isinstance(x, tuple) and x[0] == "c")
    return rows, cols


def lp_solve_exact(instance: ProblemInstance, cap: int = DEFAULT_LP_CAP) -> LpSolution:
    """Exact optimum of the capacity-constrained transport LP.

    Raises
    ------
    SizeCapError
        ``n * m`` exceeds ``cap``.
    InfeasibleInstanceError
        Marginal/bound conditions fail, or the LP itself is infeasible
        (the error then carries a violated cut).
    SolverFailure
        The duality-gap certificate could not be established.
    """
    n, m = instance.n, instance.m
    if n * m > cap:
        raise SizeCapError(f"LP oracle limited to {cap} variables (got {n * m}); "
                           f"raise --lp-cap to allow it", n * m, cap)
    feas = validate_feasibility(instance, tol=FEAS_TOL)
    if not feas.ok:
        raise InfeasibleInstanceError(f"instance infeasible: {feas.violations[:5]}",
                                      feas.violations)

    c = instance.cost.dense().ravel()
    lo = instance.lower.dense().ravel()
    hi = instance.upper.dense().ravel()
    A = _constraints(n, m)
    b = np.concatenate([instance.u, instance.v])
    res = linprog(c, A_eq=A, b_eq=b, bounds=np.column_stack([lo, hi]), method="highs-ds",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10, "presolve": True})
    if res.status == 2:
        cut = infeasibility_cut(instance)
        raise InfeasibleInstanceError(f"LP infeasible; violated cut {cut}", [cut])
    if res.status == 1:
        return LpSolution(None, float("nan"), "iteration-limit", iterations=res.nit)
    if res.status != 0:
        raise SolverFailure(f"LP solver failed: {res.message}")

    x = np.clip(res.x, lo, hi).reshape(n, m)
    plan = TransportPlan(x)
    obj = objective(instance.cost, plan)
    resid = max(np.max(np.abs(x.sum(axis=1) - instance.u)),
                np.max(np.abs(x.sum(axis=0) - instance.v)))
    if resid > FEAS_TOL:
        raise SolverFailure(f"LP plan violates marginals by {resid:.3e}")

    # Any duals (a, b) give the lower bound
    #   <u, a> + <v, b> + sum(min(r, 0) * hi + max(r, 0) * lo),  r = C - a_i - b_j.
    y = res.eqlin.marginals
    a, bb = y[:n], y[n:]
    r = c - (a[:, None] + bb[None, :]).ravel()
    dual = float(instance.u @ a + instance.v @ bb + np.sum(np.minimum(r, 0) * hi)
                 + np.sum(np.maximum(r, 0) * lo))
    gap = obj - dual
    if abs(gap) > GAP_TOL * max(1.0, abs(obj)):
        raise SolverFailure(f"duality gap {gap:.3e} exceeds {GAP_TOL:g}")
    return LpSolution(plan, obj, "optimal", gap, a, bb, res.nit)


def relative_error(candidate: TransportPlan, instance: ProblemInstance,
                   oracle: LpSolution) -> float:
    """``|<C, g> - <C, g*>| / |<C, g*>|``; absolute gap (with a warning) if ``<C, g*> = 0``."""
    if oracle.status != "optimal":
        raise ValueError(f"oracle status is {oracle.status!r}, not optimal")
    gap = abs(objective(instance.cost, candidate) - oracle.objective)
    if oracle.objective == 0:
        warnings.warn("oracle objective is zero; returning absolute gap", AbsoluteGapWarning)
        return gap
    return gap / abs(oracle.objective)


def plan_gap(candidate: TransportPlan, oracle: LpSolution) -> float:
    """Normalized Frobenius distance to the oracle plan (diagnostic only)."""
    ref = oracle.plan.gamma
    return float(np.linalg.norm(candidate.gamma - ref) / max(np.linalg.norm(ref), 1e-300))
