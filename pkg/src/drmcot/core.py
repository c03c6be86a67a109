"""Problem representation for capacity-constrained optimal transport.

An instance couples a cost description, two marginals and a pair of
elementwise bounds ``lower <= gamma <= upper``.  Costs and bounds come in
dense and implicit flavours; the implicit ones are evaluated block by block
so that solvers working with O(N + M) state never materialize an N x M
array they do not need.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

FEAS_TOL = 1e-12
MASS_TOL = 1e-12
ROUND_TRIP_TOL = 1e-12

Index = Union[slice, np.ndarray]


def _as_index(idx: Index | None, size: int) -> np.ndarray:
    if idx is None:
        return np.arange(size)
    if isinstance(idx, slice):
        return np.arange(size)[idx]
    return np.asarray(idx, dtype=np.intp)


# ---------------------------------------------------------------- marginals


@dataclass(frozen=True)
class Marginals:
    """Source masses ``u`` and sink masses ``v``.

    Entries must be finite and nonnegative.  Unit total mass is checked by
    :func:`validate_feasibility`, where a mismatch is reported as data.
    """

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        v = np.array(self.v, dtype=float).reshape(-1)
        for name, arr in (("u", u), ("v", v)):
            if arr.size == 0:
                raise ValueError(f"{name} must be non-empty")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.u.size

    @property
    def m(self) -> int:
        return self.v.size


# --------------------------------------------------------------------- costs


class CostSpec:
    """Base class for cost descriptions.  Subclasses implement :meth:`block`."""

    n: int
    m: int

    def block(self, rows: Index | None = None, cols: Index | None = None) -> np.ndarray:
        raise NotImplementedError

    def entry(self, i: int, j: int) -> float:
        return float(self.block(np.array([i]), np.array([j]))[0, 0])

    def dense(self) -> np.ndarray:
        return self.block()

    def scaled(self, factor: float) -> "CostSpec":
        raise NotImplementedError

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)


@dataclass(frozen=True)
class DenseCost(CostSpec):
    matrix: np.ndarray

    def __post_init__(self):
        c = np.array(self.matrix, dtype=float)
        if c.ndim != 2:
            raise ValueError("cost matrix must be 2-D")
        if not np.all(np.isfinite(c)) or np.any(c < 0):
            raise ValueError("cost entries must be finite and nonnegative")
        c.setflags(write=False)
        object.__setattr__(self, "matrix", c)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    def block(self, rows=None, cols=None):
        r = _as_index(rows, self.n)
        c = _as_index(cols, self.m)
        return self.matrix[np.ix_(r, c)]

    def scaled(self, factor):
        return DenseCost(self.matrix * factor)


@dataclass(frozen=True)
class Grid1DCost(CostSpec):
    """Squared distance on a uniform 1-D grid: ``C_ij = h**2 (i - j)**2``."""

    size: int
    h: float

    def __post_init__(self):
        if self.size < 1 or not self.h > 0:
            raise ValueError("grid needs size >= 1 and spacing > 0")

    @property
    def n(self) -> int:
        return self.size

    @property
    def m(self) -> int:
        return self.size

    def block(self, rows=None, cols=None):
        r = _as_index(rows, self.n).astype(float)
        c = _as_index(cols, self.m).astype(float)
        d = r[:, None] - c[None, :]
        return self.h**2 * d * d

    def scaled(self, factor):
        return Grid1DCost(self.size, self.h * np.sqrt(factor))


@dataclass(frozen=True)
class Grid2DCost(CostSpec):
    """Squared distance on a ``side x side`` grid, flattened row-major.

    Cell ``(i1, i2)`` has flat index ``i1 * side + i2``.
    """

    side: int
    h_x: float
    h_y: float

    def __post_init__(self):
        if self.side < 1 or not (self.h_x > 0 and self.h_y > 0):
            raise ValueError("grid needs side >= 1 and spacings > 0")

    @property
    def n(self) -> int:
        return self.side * self.side

    @property
    def m(self) -> int:
        return self.side * self.side

    def block(self, rows=None, cols=None):
        r = _as_index(rows, self.n)
        c = _as_index(cols, self.m)
        r1, r2 = np.divmod(r, self.side)
        c1, c2 = np.divmod(c, self.side)
        dx = (r1[:, None] - c1[None, :]).astype(float)
        dy = (r2[:, None] - c2[None, :]).astype(float)
        return self.h_x**2 * dx * dx + self.h_y**2 * dy * dy

    def scaled(self, factor):
        s = np.sqrt(factor)
        return Grid2DCost(self.side, self.h_x * s, self.h_y * s)


# -------------------------------------------------------------------- bounds


class BoundSpec:
    """Base class for an elementwise bound matrix of a fixed shape."""

    n: int
    m: int

    def block(self, rows: Index | None = None, cols: Index | None = None) -> np.ndarray:
        raise NotImplementedError

    def entry(self, i: int, j: int) -> float:
        return float(self.block(np.array([i]), np.array([j]))[0, 0])

    def dense(self) -> np.ndarray:
        return self.block()

    def row_sums(self) -> np.ndarray:
        return self.dense().sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.dense().sum(axis=0)

    def total(self) -> float:
        return float(self.row_sums().sum())

    def is_zero(self) -> bool:
        return False

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.m)


@dataclass(frozen=True)
class UniformBound(BoundSpec):
    n: int
    m: int
    value: float

    def __post_init__(self):
        if not np.isfinite(self.value) or self.value < 0:
            raise ValueError("uniform bound must be finite and nonnegative")

    def block(self, rows=None, cols=None):
        r = _as_index(rows, self.n)
        c = _as_index(cols, self.m)
        return np.full((r.size, c.size), float(self.value))

    def row_sums(self):
        return np.full(self.n, self.value * self.m)

    def col_sums(self):
        return np.full(self.m, self.value * self.n)

    def total(self):
        return float(self.value) * self.n * self.m

    def is_zero(self):
        return self.value == 0


@dataclass(frozen=True)
class DenseBound(BoundSpec):
    matrix: np.ndarray

    def __post_init__(self):
        b = np.array(self.matrix, dtype=float)
        if b.ndim != 2:
            raise ValueError("bound matrix must be 2-D")
        if not np.all(np.isfinite(b)) or np.any(b < 0):
            raise ValueError("bound entries must be finite and nonnegative")
        b.setflags(write=False)
        object.__setattr__(self, "matrix", b)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def m(self) -> int:
        return self.matrix.shape[1]

    def block(self, rows=None, cols=None):
        return self.matrix[np.ix_(_as_index(rows, self.n), _as_index(cols, self.m))]

    def row_sums(self):
        return self.matrix.sum(axis=1)

    def col_sums(self):
        return self.matrix.sum(axis=0)

    def is_zero(self):
        return not np.any(self.matrix)


@dataclass(frozen=True)
class RankOnePlusDenseBound(BoundSpec):
    """``scale * a b^T + delta * noise``; ``noise`` may be omitted (pure rank one)."""

    a: np.ndarray
    b: np.ndarray
    scale: float = 1.0
    noise: np.ndarray | None = None
    delta: float = 0.0

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        b = np.array(self.b, dtype=float).reshape(-1)
        if np.any(a < 0) or np.any(b < 0) or self.scale < 0 or self.delta < 0:
            raise ValueError("rank-one bound factors must be nonnegative")
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        if self.noise is not None:
            p = np.array(self.noise, dtype=float)
            if p.shape != (a.size, b.size) or np.any(p < 0):
                raise ValueError("noise must be a nonnegative (n, m) matrix")
            p.setflags(write=False)
            object.__setattr__(self, "noise", p)

    @property
    def n(self) -> int:
        return self.a.size

    @property
    def m(self) -> int:
        return self.b.size

    def _has_noise(self) -> bool:
        return self.noise is not None and self.delta != 0

    def block(self, rows=None, cols=None):
        r = _as_index(rows, self.n)
        c = _as_index(cols, self.m)
        out = self.scale * np.outer(self.a[r], self.b[c])
        if self._has_noise():
            out += self.delta * self.noise[np.ix_(r, c)]
        return out

    def row_sums(self):
        s = self.scale * self.a * self.b.sum()
        if self._has_noise():
            s = s + self.delta * self.noise.sum(axis=1)
        return s

    def col_sums(self):
        s = self.scale * self.b * self.a.sum()
        if self._has_noise():
            s = s + self.delta * self.noise.sum(axis=0)
        return s

    def is_zero(self):
        return (self.scale == 0 or not np.any(self.a) or not np.any(self.b)) and not (
            self._has_noise() and np.any(self.noise)
        )


@dataclass(frozen=True)
class CapacityBounds:
    lower: BoundSpec
    upper: BoundSpec

    def theta(self, i: int, j: int) -> float:
        return self.lower.entry(i, j)

    def eta(self, i: int, j: int) -> float:
        return self.upper.entry(i, j)


def zero_bound(n: int, m: int) -> UniformBound:
    return UniformBound(n, m, 0.0)


# ------------------------------------------------------------------ instance


@dataclass(frozen=True)
class ProblemInstance:
    cost: CostSpec
    marginals: Marginals
    bounds: CapacityBounds

    def __post_init__(self):
        shapes = {self.cost.shape, self.bounds.lower.shape, self.bounds.upper.shape}
        if shapes != {(self.marginals.n, self.marginals.m)}:
            raise ValueError(f"inconsistent shapes: {sorted(shapes)} vs marginals "
                             f"({self.marginals.n}, {self.marginals.m})")

    @property
    def n(self) -> int:
        return self.marginals.n

    @property
    def m(self) -> int:
        return self.marginals.m

    @property
    def u(self) -> np.ndarray:
        return self.marginals.u

    @property
    def v(self) -> np.ndarray:
        return self.marginals.v

    @property
    def lower(self) -> BoundSpec:
        return self.bounds.lower

    @property
    def upper(self) -> BoundSpec:
        return self.bounds.upper

    @classmethod
    def from_arrays(cls, cost, u, v, upper, lower=None) -> "ProblemInstance":
        """Convenience constructor from plain arrays (scalars give uniform bounds)."""
        marg = Marginals(u, v)
        n, m = marg.n, marg.m
        cost_spec = cost if isinstance(cost, CostSpec) else DenseCost(cost)

        def _bound(x):
            if x is None:
                return zero_bound(n, m)
            if isinstance(x, BoundSpec):
                return x
            if np.ndim(x) == 0:
                return UniformBound(n, m, float(x))
            return DenseBound(x)

        return cls(cost_spec, marg, CapacityBounds(_bound(lower), _bound(upper)))


@dataclass(frozen=True)
class TransportPlan:
    gamma: np.ndarray

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        if g.ndim != 2:
            raise ValueError("plan must be 2-D")
        object.__setattr__(self, "gamma", g)

    @property
    def shape(self) -> tuple[int, int]:
        return self.gamma.shape


@dataclass(frozen=True)
class ReductionRecord:
    k_theta: float
    theta_snapshot: BoundSpec

    def __post_init__(self):
        if not self.k_theta > 0:
            raise ValueError("k_theta must be positive")


# --------------------------------------------------------------- validation


@dataclass(frozen=True)
class Violation:
    kind: str  # row_lower, row_upper, col_lower, col_upper, mass_u, mass_v, bounds
    index: int | None
    amount: float


@dataclass(frozen=True)
class FeasibilityResult:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def rows(self) -> list[int]:
        return sorted({v.index for v in self.violations if v.kind.startswith("row")})

    def cols(self) -> list[int]:
        return sorted({v.index for v in self.violations if v.kind.startswith("col")})


def validate_feasibility(instance: ProblemInstance, tol: float = FEAS_TOL) -> FeasibilityResult:
    """Check ``theta 1 <= u <= eta 1``, its column mirror, unit mass and ``theta <= eta``."""
    out: list[Violation] = []
    u, v = instance.u, instance.v
    lo, up = instance.lower, instance.upper

    for name, total in (("mass_u", u.sum()), ("mass_v", v.sum())):
        if abs(total - 1.0) > MASS_TOL:
            out.append(Violation(name, None, float(total - 1.0)))

    checks = (
        ("row_lower", lo.row_sums() - u),
        ("row_upper", u - up.row_sums()),
        ("col_lower", lo.col_sums() - v),
        ("col_upper", v - up.col_sums()),
    )
    for kind, excess in checks:
        for idx in np.flatnonzero(excess > tol):
            out.append(Violation(kind, int(idx), float(excess[idx])))

    if not lo.is_zero():
        gap = lo.dense() - up.dense()
        if np.any(gap > tol):
            out.append(Violation("bounds", None, float(gap.max())))
    return FeasibilityResult(out)


# ----------------------------------------------------------------- reduction


def reduce_to_upper_bounded(instance: ProblemInstance) -> tuple[ProblemInstance, ReductionRecord]:
    """Shift out the lower bound: ``gamma = k * gamma' + theta`` with ``k = 1 - sum(theta)``.

    Returns the reduced instance (zero lower bound, cost ``k * C``) and the
    record needed by :func:`lift_plan`.  A zero lower bound gives back the
    input unchanged with ``k = 1``.
    """
    theta = instance.lower
    if theta.is_zero():
        return instance, ReductionRecord(1.0, theta)

    k = 1.0 - theta.total()
    if not k > 0:
        raise ValueError(f"lower bounds carry the whole mass (k_theta = {k:.3e})")

    u_red = (instance.u - theta.row_sums()) / k
    v_red = (instance.v - theta.col_sums()) / k
    # round-off can leave -1e-17 where u_i == sum_j theta_ij
    u_red = np.where(np.abs(u_red) < FEAS_TOL, 0.0, u_red)
    v_red = np.where(np.abs(v_red) < FEAS_TOL, 0.0, v_red)

    eta = instance.upper
    if isinstance(theta, UniformBound) and isinstance(eta, UniformBound):
        eta_red: BoundSpec = UniformBound(eta.n, eta.m, (eta.value - theta.value) / k)
    else:
        diff = eta.dense() - theta.dense()
        eta_red = DenseBound(np.where(np.abs(diff) < FEAS_TOL, 0.0, diff) / k)

    reduced = ProblemInstance(
        instance.cost.scaled(k),
        Marginals(u_red, v_red),
        CapacityBounds(zero_bound(instance.n, instance.m), eta_red),
    )
    return reduced, ReductionRecord(k, theta)


def lift_plan(reduced_plan: TransportPlan, record: ReductionRecord) -> TransportPlan:
    theta = record.theta_snapshot
    if reduced_plan.shape != theta.shape:
        raise ValueError(f"plan shape {reduced_plan.shape} != bound shape {theta.shape}")
    if theta.is_zero() and record.k_theta == 1.0:
        return TransportPlan(reduced_plan.gamma.copy())
    return TransportPlan(record.k_theta * reduced_plan.gamma + theta.dense())


# ---------------------------------------------------------------- objectives


def _check_shape(cost: CostSpec, plan: TransportPlan) -> None:
    if cost.shape != plan.shape:
        raise ValueError(f"cost shape {cost.shape} != plan shape {plan.shape}")


def objective(cost: CostSpec, plan: TransportPlan, block_rows: int | None = None) -> float:
    """``<C, gamma>``, evaluated in row blocks for implicit costs."""
    _check_shape(cost, plan)
    if isinstance(cost, DenseCost):
        return float(np.sum(cost.matrix * plan.gamma))
    n, m = plan.shape
    step = block_rows or max(1, (1 << 20) // max(m, 1))
    total = 0.0
    for start in range(0, n, step):
        rows = slice(start, min(n, start + step))
        total += float(np.sum(cost.block(rows) * plan.gamma[rows]))
    return total


def _xlogx(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    pos = x > 0
    out[pos] = x[pos] * np.log(x[pos])
    return out


def regularized_objective(instance: ProblemInstance, plan: TransportPlan, epsilon: float,
                          tol: float = FEAS_TOL) -> float:
    """``<C, g> + eps <g, ln g> + eps <eta - g, ln(eta - g)>`` with ``0 ln 0 = 0``."""
    _check_shape(instance.cost, plan)
    g = plan.gamma
    eta = instance.upper.dense()
    if np.any(g < -tol) or np.any(g > eta + tol):
        raise ValueError("plan leaves [0, eta]; entropy terms undefined")
    base = objective(instance.cost, plan)
    if epsilon == 0:
        return base
    gc = np.clip(g, 0.0, eta)
    return base + epsilon * float(_xlogx(gc).sum() + _xlogx(eta - gc).sum())


def marginal_residuals(plan: TransportPlan, marginals: Marginals) -> tuple[float, float]:
    """Sup-norm errors of the row and column sums."""
    if plan.shape != (marginals.n, marginals.m):
        raise ValueError(f"plan shape {plan.shape} != marginals ({marginals.n}, {marginals.m})")
    g = plan.gamma
    row = float(np.max(np.abs(g.sum(axis=1) - marginals.u)))
    col = float(np.max(np.abs(g.sum(axis=0) - marginals.v)))
    return row, col


def bound_violation(instance: ProblemInstance, plan: TransportPlan) -> float:
    """Largest amount by which the plan leaves ``[theta, eta]`` (0 when inside)."""
    g = plan.gamma
    over = float(np.max(g - instance.upper.dense()))
    under = float(np.max(instance.lower.dense() - g))
    return max(0.0, over, under)
