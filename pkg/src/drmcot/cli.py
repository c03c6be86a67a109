"""Command-line front end.

Subcommands::

    drmcot solve            one instance (JSON file or generator flags), JSON report
    drmcot bench            experiment table as CSV or JSON
    drmcot trace-plot-data  iteration / time / relative-error series from a trace
    drmcot generate         write a generated instance as JSON

Exit codes: 0 success, 1 solver failure, 2 usage error, 3 unreadable
instance, 4 infeasible instance, 5 size cap exceeded, 6 degenerate
instance.  A solve that stops on ``--maxiter`` or ``--time-budget`` still
exits 0 and reports ``converged: false``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import bench
from .core import ProblemInstance
from .errors import CotError, DegenerateInstanceError, InfeasibleInstanceError, SizeCapError
from .gen import FAMILIES, GenerationError, GenSpec, generate
from .io import InstanceFormatError, instance_to_dict, load_instance
from .lp import lp_solve_exact, relative_error

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INFEASIBLE = 4
EXIT_SIZE_CAP = 5
EXIT_DEGENERATE = 6

# plans larger than this are only printed when asked for explicitly
PLAN_PRINT_LIMIT = 10_000


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(x):
    """NaN and inf are not JSON; report them as null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_clean(v) for v in x]
    return x


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(out).write_text(text)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=1e-3)
    p.add_argument("--outer-tol", type=float, default=1e-5)
    p.add_argument("--newton-tol", type=float, default=1e-5)
    p.add_argument("--maxiter", type=int, default=100_000)
    p.add_argument("--stabilize", action=argparse.BooleanOptionalAction, default=True,
                   help="log-domain stabilization for drm (default on)")
    p.add_argument("--time-budget", type=float, default=300.0,
                   help="seconds per solve; 0 disables the limit")
    p.add_argument("--lp-cap", type=int, default=bench.DEFAULT_LP_CAP,
                   help="largest n*m the LP oracle accepts")


def _add_family_flags(p: argparse.ArgumentParser, many: bool) -> None:
    nargs = "+" if many else None
    p.add_argument("--family", choices=FAMILIES, nargs=nargs,
                   default=["uniform1d"] if many else "uniform1d")
    p.add_argument("--size", type=int, nargs=nargs, default=[100] if many else 100,
                   help="support points per side (grid side for the 2-D families)")
    p.add_argument("--lambda", dest="lam", type=float, nargs=nargs,
                   default=[5.0] if many else 5.0, help="uniform-capacity parameter")
    p.add_argument("--delta", type=float, nargs=nargs, default=[0.0] if many else 0.0,
                   help="marginal-capacity noise level")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drmcot", description="Capacity-constrained optimal transport solvers.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one instance and print a JSON report")
    p.add_argument("--instance", help="instance JSON file (overrides the generator flags)")
    _add_family_flags(p, many=False)
    p.add_argument("--solver", choices=bench.SOLVERS, default="drm")
    _add_solver_flags(p)
    p.add_argument("--trace", help="write per-iteration JSON lines here")
    p.add_argument("--out", help="report destination (default stdout)")
    p.add_argument("--emit-plan", action="store_true",
                   help=f"include the plan in the report (automatic up to {PLAN_PRINT_LIMIT} "
                        f"entries)")
    p.add_argument("--no-oracle", action="store_true",
                   help="skip the LP reference solve")

    p = sub.add_parser("bench", help="run an experiment table")
    _add_family_flags(p, many=True)
    p.add_argument("--solver", choices=bench.SOLVERS, nargs="+", default=["drm", "ibp"])
    p.add_argument("--epsilon", type=float, nargs="+", default=[1e-3])
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--outer-tol", type=float, default=1e-5)
    p.add_argument("--newton-tol", type=float, default=1e-5)
    p.add_argument("--maxiter", type=int, default=100_000)
    p.add_argument("--stabilize", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--time-budget", type=float, default=300.0)
    p.add_argument("--lp-cap", type=int, default=bench.DEFAULT_LP_CAP)
    p.add_argument("--deterministic-times", action="store_true",
                   help="report mean iteration counts instead of wall time")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out")

    p = sub.add_parser("trace-plot-data", help="CSV of iteration, time and relative error")
    p.add_argument("trace")
    p.add_argument("--out")

    p = sub.add_parser("generate", help="write a generated instance as JSON")
    _add_family_flags(p, many=False)
    p.add_argument("--out")
    return parser


def _options(args) -> bench.SolverOptions:
    budget = args.time_budget if args.time_budget and args.time_budget > 0 else None
    return bench.SolverOptions(epsilon=args.epsilon, outer_tol=args.outer_tol,
                               newton_tol=args.newton_tol, maxiter=args.maxiter,
                               stabilize=args.stabilize, time_budget=budget,
                               lp_cap=args.lp_cap)


def _load(args) -> ProblemInstance:
    if args.instance:
        return load_instance(args.instance)
    inst, _ = generate(GenSpec(args.family, args.size, lam=args.lam, delta=args.delta,
                               seed=args.seed))
    return inst


def cmd_solve(args) -> int:
    inst = _load(args)
    opts = _options(args)

    oracle = None
    if not args.no_oracle and args.solver != "lp" and inst.n * inst.m <= opts.lp_cap:
        oracle = lp_solve_exact(inst, cap=opts.lp_cap)

    writer = None
    if args.trace:
        header = {"solver": args.solver, "epsilon": opts.epsilon, "n": inst.n, "m": inst.m,
                  "oracle_objective": None if oracle is None else oracle.objective}
        writer = bench.TraceWriter(args.trace, header)
    try:
        plan, report = bench.run_solver(args.solver, inst, opts, trace=writer)
    finally:
        if writer is not None:
            writer.close()

    if args.solver == "lp":
        rel, ref = 0.0, report.objective
    elif oracle is not None:
        rel, ref = relative_error(plan, inst, oracle), oracle.objective
    else:
        rel, ref = None, None
    doc = {
        "solver": args.solver,
        "n": inst.n,
        "m": inst.m,
        "objective": report.objective,
        "converged": report.converged,
        "row_residual": report.final_row_residual,
        "col_residual": report.final_col_residual,
        "relative_error": rel,
        "oracle_objective": ref,
        "report": report.to_dict(),
    }
    if plan is not None and (args.emit_plan or inst.n * inst.m <= PLAN_PRINT_LIMIT):
        doc["plan"] = plan.gamma
    _emit(json.dumps(_clean(json.loads(json.dumps(doc, default=_json_default))), indent=2),
          args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    opts = _options(args)
    params = {}
    for fam in args.family:
        params[fam] = args.lam if fam.startswith("uniform") else args.delta
    threads = int(os.environ.get(bench.THREADS_ENV, "1"))
    rows = bench.run_bench(args.family, params, args.size, trials=args.trials, seed=args.seed,
                           solvers=tuple(args.solver), epsilons=tuple(args.epsilon),
                           options=opts, deterministic_times=args.deterministic_times,
                           threads=max(1, threads))
    text = bench.rows_to_csv(rows) if args.format == "csv" else bench.rows_to_json(rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_trace_plot_data(args) -> int:
    _emit(bench.trace_plot_data(args.trace), args.out)
    return EXIT_OK


def cmd_generate(args) -> int:
    inst, retries = generate(GenSpec(args.family, args.size, lam=args.lam, delta=args.delta,
                                     seed=args.seed))
    if retries:
        print(f"note: {retries} infeasible draw(s) skipped", file=sys.stderr)
    _emit(json.dumps(instance_to_dict(inst)), args.out)
    return EXIT_OK


_COMMANDS = {
    "solve": cmd_solve,
    "bench": cmd_bench,
    "trace-plot-data": cmd_trace_plot_data,
    "generate": cmd_generate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # argparse exits with 2 on usage errors
    try:
        return _COMMANDS[args.command](args)
    except (InstanceFormatError, bench.TraceError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InfeasibleInstanceError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SizeCapError as exc:
        print(f"size cap: {exc}", file=sys.stderr)
        return EXIT_SIZE_CAP
    except DegenerateInstanceError as exc:
        print(f"degenerate: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (GenerationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CotError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
