"""Benchmark harness: tables of time / relative error per experiment cell.

Conventions follow the published tables: the relative error of a cell is
``N/A`` when the instance is above the LP oracle's size cap, and a solver
that fails or runs past the time budget is recorded as ``-``.
"""

from __future__ import annotations

import csv
import io
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import ProblemInstance, marginal_residuals
from .drm import DrmConfig, SolveReport, drm_solve
from .errors import CotError
from .gen import GenSpec, generate
from .ibp import IbpConfig, ibp_solve
from .lp import DEFAULT_LP_CAP, LpSolution, lp_solve_exact, relative_error

CSV_COLUMNS = ("family", "param", "size", "solver", "epsilon", "time_s", "rel_err",
               "speedup", "converged_frac", "trials")
SOLVERS = ("drm", "ibp", "lp")
NA = "N/A"
FAILED = "-"
THREADS_ENV = "DRMCOT_THREADS"


@dataclass
class SolverOptions:
    epsilon: float = 1e-3
    outer_tol: float = 1e-5
    newton_tol: float = 1e-5
    maxiter: int = 100_000
    stabilize: bool = True
    time_budget: float | None = 300.0
    lp_cap: int = DEFAULT_LP_CAP


def run_solver(name: str, instance: ProblemInstance, opts: SolverOptions, trace=None):
    """Dispatch to one solver; returns ``(plan, report)``."""
    if name == "drm":
        cfg = DrmConfig(epsilon=opts.epsilon, outer_tol=opts.outer_tol,
                        newton_tol=opts.newton_tol, max_outer_iters=opts.maxiter,
                        stabilization_enabled=opts.stabilize, time_limit=opts.time_budget)
        return drm_solve(instance, cfg, trace=trace)
    if name == "ibp":
        cfg = IbpConfig(epsilon=opts.epsilon, outer_tol=opts.outer_tol, max_iters=opts.maxiter,
                        time_limit=opts.time_budget)
        return ibp_solve(instance, cfg, trace=trace)
    if name == "lp":
        t0 = time.perf_counter()
        sol = lp_solve_exact(instance, cap=opts.lp_cap)
        report = lp_report(sol, instance, time.perf_counter() - t0)
        if trace is not None:
            trace({"iteration": 1, "time_s": report.wall_time, "delta_outer": 0.0,
                   "row_res": report.final_row_residual, "col_res": report.final_col_residual,
                   "objective": sol.objective})
        return sol.plan, report
    raise ValueError(f"unknown solver {name!r}; expected one of {SOLVERS}")


def lp_report(sol: LpSolution, instance: ProblemInstance, wall: float) -> SolveReport:
    rep = SolveReport(solver="lp", epsilon=0.0, outer_iters=sol.iterations,
                      converged=sol.status == "optimal", stop_reason=sol.status, wall_time=wall,
                      objective=sol.objective, state_scalars=2 * instance.n * instance.m)
    if sol.plan is not None:
        rep.final_row_residual, rep.final_col_residual = marginal_residuals(
            sol.plan, instance.marginals)
    return rep


@dataclass
class BenchRow:
    family: str
    param: float
    size: int
    solver: str
    epsilon: float
    time_s: float | str
    rel_err: float | str
    speedup: float | str
    converged_frac: float | str
    trials: int
    state_scalars: int | str = NA

    def csv_values(self) -> list[str]:
        out = []
        for col in CSV_COLUMNS:
            val = getattr(self, col)
            out.append(f"{val:.6e}" if isinstance(val, float) else str(val))
        return out


@dataclass
class _Trial:
    time: float | None = None  # None: failed or over budget
    iterations: int = 0
    rel_err: float | None = None
    converged: bool = False
    state: int = 0


def _run_trial(family, param, n, seed, solvers, opts):
    spec = GenSpec(family, n, lam=param, delta=param, seed=seed)
    inst, _ = generate(spec)
    size = inst.n * inst.m
    oracle = None
    oracle_time = None
    if size <= opts.lp_cap:
        t0 = time.perf_counter()
        try:
            oracle = lp_solve_exact(inst, cap=opts.lp_cap)
            oracle_time = time.perf_counter() - t0
        except CotError:
            oracle = None

    results = {}
    for name in solvers:
        tr = _Trial()
        if name == "lp":
            if oracle is not None:
                tr = _Trial(oracle_time, oracle.iterations, 0.0, True, 2 * size)
            results[name] = tr
            continue
        try:
            plan, rep = run_solver(name, inst, opts)
        except CotError:
            results[name] = tr
            continue
        if rep.stop_reason != "time_limit":
            tr.time = rep.wall_time
        tr.iterations = rep.outer_iters
        tr.converged = rep.converged
        tr.state = rep.state_scalars
        if oracle is not None:
            tr.rel_err = relative_error(plan, inst, oracle)
        results[name] = tr
    return results


def run_bench(families, params, sizes, trials=5, seed=0, solvers=("drm", "ibp"),
              epsilons=(1e-3,), options: SolverOptions | None = None,
              deterministic_times: bool = False, threads: int | None = None) -> list[BenchRow]:
    """One row per (family, param, size, solver, epsilon), averaged over ``trials``.

    ``params`` is a mapping ``family -> list of lambda/delta values`` or a
    plain list applied to every family.  Trial ``k`` uses seed ``seed + k``.
    With ``deterministic_times`` the time column holds mean outer iteration
    counts so that whole rows are reproducible.
    """
    base = options or SolverOptions()
    if threads is None:
        threads = max(1, int(os.environ.get(THREADS_ENV, "1")))
    rows: list[BenchRow] = []
    for family in families:
        fam_params = params[family] if isinstance(params, dict) else params
        for param in fam_params:
            for n in sizes:
                for eps in epsilons:
                    opts = SolverOptions(**{**asdict(base), "epsilon": eps})
                    seeds = [seed + k for k in range(trials)]
                    if threads > 1:
                        with ThreadPoolExecutor(threads) as pool:
                            per_trial = list(pool.map(
                                lambda s: _run_trial(family, param, n, s, solvers, opts), seeds))
                    else:
                        per_trial = [_run_trial(family, param, n, s, solvers, opts)
                                     for s in seeds]
                    size = n * n if family.endswith("2d") else n
                    rows.extend(_aggregate(family, param, size, eps, solvers, per_trial,
                                           deterministic_times))
    return rows


def _aggregate(family, param, size, eps, solvers, per_trial, deterministic):
    means = {}
    for name in solvers:
        trs = [t[name] for t in per_trial]
        if any(t.time is None for t in trs):
            means[name] = (FAILED, FAILED, FAILED, NA)
            continue
        tval = float(np.mean([t.iterations if deterministic else t.time for t in trs]))
        errs = [t.rel_err for t in trs]
        err = NA if any(e is None for e in errs) else float(np.mean(errs))
        conv = float(np.mean([t.converged for t in trs]))
        means[name] = (tval, err, conv, max(t.state for t in trs))

    out = []
    for name in solvers:
        tval, err, conv, state = means[name]
        speed = NA
        if name == "drm" and "ibp" in means:
            t_ibp = means["ibp"][0]
            if isinstance(tval, float) and isinstance(t_ibp, float) and tval > 0:
                speed = t_ibp / tval
        out.append(BenchRow(family, float(param), size, name, float(eps), tval, err, speed,
                            conv, len(per_trial), state))
    return out


def rows_to_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_values())
    return buf.getvalue()


def rows_to_json(rows: list[BenchRow]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2)


# ------------------------------------------------------------------ traces


class TraceWriter:
    """JSON-lines trace: one header line, then one record per iteration."""

    def __init__(self, path, header: dict):
        self._fh = open(path, "w")
        self._fh.write(json.dumps({"type": "header", **header}) + "\n")

    def __call__(self, record: dict) -> None:
        self._fh.write(json.dumps({"type": "iter", **record}) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class TraceError(ValueError):
    pass


def read_trace(path) -> tuple[dict, list[dict]]:
    header: dict = {}
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        if rec.get("type") == "header":
            header = rec
        else:
            records.append(rec)
    return header, records


def trace_plot_data(path) -> str:
    """CSV of ``iteration, time_s, rel_err`` from a trace with an oracle objective."""
    header, records = read_trace(path)
    ref = header.get("oracle_objective")
    if records and ref is None:
        raise TraceError(f"{path}: trace has no oracle objective; rerun solve with the oracle")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("iteration", "time_s", "rel_err"))
    for rec in records:
        gap = abs(rec["objective"] - ref)
        err = gap / abs(ref) if ref != 0 else gap
        w.writerow((rec["iteration"], f"{rec['time_s']:.6e}", repr(float(err))))
    return buf.getvalue()

