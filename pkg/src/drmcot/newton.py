"""Safeguarded Newton iteration for strictly decreasing functions on (0, inf).

The unknown is handled through its logarithm ``t = ln x``: a bracket
``lo < t* < hi`` is kept, a Newton step that leaves the bracket (or is not
finite) is replaced by bisection, and while one side of the bracket is
still open the step length doubles.  Bisection in ``t`` is bisection of
``x`` at the geometric mean, which is what makes the scheme indifferent to
the many orders of magnitude the dual scalings span at small epsilon.

:func:`solve_log_roots` runs many independent problems at once; each entry
iterates and stops on its own, so a batched call returns exactly what the
same problems would give one at a time.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

MAX_EXPANSIONS = 200


class NewtonFailure(RuntimeError):
    """Raised when some roots could not be located.

    ``indices`` are positions within the batch that failed.
    """

    def __init__(self, message: str, indices=()):
        super().__init__(message)
        self.indices = list(indices)


# evaluate(t, idx) -> (G, dG/dt) for the batch entries idx at log-points t
LogEvaluator = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]


def solve_log_roots(evaluate: LogEvaluator, t0: np.ndarray, tol: float = 1e-5,
                    max_iter: int = 100, abs_floor: np.ndarray | float = 0.0):
    """Find ``t`` with ``G_k(t_k) = 0`` for a batch of decreasing functions.

    Parameters
    ----------
    evaluate : callable
        ``evaluate(t, idx)`` returns values and derivatives (w.r.t. ``t``)
        of the functions ``idx`` at the points ``t``.
    t0 : ndarray
        Starting log-points (warm start).
    tol : float
        Stop once the relative change of ``x = exp(t)`` between adjacent
        iterates is below ``tol``.
    max_iter : int
        Iteration cap per entry.
    abs_floor : float or ndarray
        Also stop when ``|G| <= abs_floor``.

    Returns
    -------
    t : ndarray
        Log-roots.
    iterations : int
        Total function evaluations summed over the batch.
    """
    t = np.array(t0, dtype=float)
    size = t.size
    floor = np.broadcast_to(np.asarray(abs_floor, dtype=float), (size,))
    lo = np.full(size, -np.inf)
    hi = np.full(size, np.inf)
    step = np.ones(size)
    expansions = np.zeros(size, dtype=int)

    all_idx = np.arange(size)
    g, dg = evaluate(t, all_idx)
    evals = size
    done = np.abs(g) <= floor
    lo = np.where(g > 0, t, lo)
    hi = np.where(g < 0, t, hi)

    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            return t, evals
        ta, ga, dga = t[act], g[act], dg[act]
        la, ha = lo[act], hi[act]

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            prop = ta - ga / dga
        closed = np.isfinite(la) & np.isfinite(ha)
        bad = ~np.isfinite(prop) | (prop <= la) | (prop >= ha)
        # flat regions give huge Newton steps; while open, never outrun the expansion
        bad |= ~closed & (np.abs(prop - ta) > step[act])

        bis = bad & closed
        prop[bis] = 0.5 * (la[bis] + ha[bis])

        grow = bad & ~closed
        if np.any(grow):
            sa = step[act]
            right = grow & (ga > 0)
            left = grow & (ga < 0)
            prop[right] = la[right] + sa[right]
            prop[left] = ha[left] - sa[left]
            sa[grow] *= 2.0
            step[act] = sa
            expansions[act[grow]] += 1
            lost = act[expansions[act] > MAX_EXPANSIONS]
            if lost.size:
                raise NewtonFailure(
                    f"no sign change found after {MAX_EXPANSIONS} bracket expansions",
                    lost)

        gn, dgn = evaluate(prop, act)
        evals += act.size
        with np.errstate(over="ignore"):
            rel = np.abs(np.expm1(prop - ta))
        lo[act] = np.where(gn > 0, prop, la)
        hi[act] = np.where(gn < 0, prop, ha)
        t[act], g[act], dg[act] = prop, gn, dgn

        stop = (rel <= tol) | (np.abs(gn) <= floor[act]) | (gn == 0)
        stop |= (hi[act] - lo[act]) <= tol * np.maximum(1.0, np.abs(prop))
        done[act[stop]] = True

    left = np.flatnonzero(~done)
    if left.size:
        raise NewtonFailure(f"Newton did not reach tolerance {tol:g} within {max_iter} "
                            f"iterations", left)
    return t, evals


def newton_root(evaluate: Callable[[float], "tuple[float, float]"], bracket_hint: float,
                tol: float = 1e-5, max_iter: int = 100, abs_floor: float = 0.0) -> float:
    """Positive root of a strictly decreasing scalar function.

    ``evaluate(x)`` returns ``(f(x), f'(x))``.  The function must be positive
    near 0 and negative for large ``x``.

    >>> round(newton_root(lambda x: (3.0 - x, -1.0), 1.0), 12)
    3.0
    """
    if not bracket_hint > 0:
        raise ValueError("bracket_hint must be positive")

    def _log_eval(t, idx):
        x = np.exp(t[0])
        f, df = evaluate(float(x))
        return np.array([f], dtype=float), np.array([df * x], dtype=float)

    t, _ = solve_log_roots(_log_eval, np.array([np.log(bracket_hint)]), tol=tol,
                           max_iter=max_iter, abs_floor=abs_floor)
    return float(np.exp(t[0]))
