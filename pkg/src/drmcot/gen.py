"""Seeded generators for the four benchmark families.

Randomness comes from numpy's Philox counter-based generator.  A seed is
expanded with ``SeedSequence(seed).spawn(3)`` into three independent
streams: source masses, sink masses and the capacity noise matrix.  The
same seed therefore gives bit-identical instances on any platform numpy
supports.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CapacityBounds,
    CostSpec,
    Grid1DCost,
    Grid2DCost,
    Marginals,
    ProblemInstance,
    RankOnePlusDenseBound,
    UniformBound,
    validate_feasibility,
    zero_bound,
)

FAMILIES = ("uniform1d", "marginal1d", "uniform2d", "marginal2d")
MAX_RETRIES = 100

_STREAM_U, _STREAM_V, _STREAM_P = range(3)


class GenerationError(ValueError):
    pass


def _stream(seed: int, which: int) -> np.random.Generator:
    child = np.random.SeedSequence(int(seed) & (2**64 - 1)).spawn(3)[which]
    return np.random.Generator(np.random.Philox(child))


@dataclass(frozen=True)
class GenSpec:
    family: str
    n: int
    lam: float = 5.0
    delta: float = 0.0
    seed: int = 0
    h: float | None = None
    h_x: float | None = None
    h_y: float | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @property
    def is_2d(self) -> bool:
        return self.family.endswith("2d")

    @property
    def size(self) -> int:
        """Number of support points (``n**2`` for the 2-D families)."""
        return self.n * self.n if self.is_2d else self.n

    @property
    def param(self) -> float:
        return self.lam if self.family.startswith("uniform") else self.delta


def gen_marginals(n: int, seed: int) -> Marginals:
    """Two histograms with i.i.d. uniform(0, 1] weights, normalized to unit mass."""
    if n < 1:
        raise ValueError("n must be >= 1")
    u = 1.0 - _stream(seed, _STREAM_U).random(n)
    v = 1.0 - _stream(seed, _STREAM_V).random(n)
    return Marginals(u / u.sum(), v / v.sum())


def gen_cost_1d(n: int, h: float | None = None) -> CostSpec:
    return Grid1DCost(n, 1.0 / n if h is None else h)


def gen_cost_2d(n: int, h_x: float | None = None, h_y: float | None = None) -> CostSpec:
    return Grid2DCost(n, 1.0 / n if h_x is None else h_x, 1.0 / n if h_y is None else h_y)


def gen_uniform_capacity(n: int, lam: float) -> CapacityBounds:
    """Zero lower bound and every upper entry equal to ``lam / n**2``.

    ``n`` is the number of support points (flattened size in 2-D).
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    return CapacityBounds(zero_bound(n, n), UniformBound(n, n, lam / n**2))


def gen_marginal_capacity(marginals: Marginals, delta: float, seed: int) -> CapacityBounds:
    """``eta = 2 u v^T + delta P`` with ``P`` i.i.d. uniform(0, 1); ``u v^T`` stays feasible."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    noise = None
    if delta > 0:
        noise = _stream(seed, _STREAM_P).random((marginals.n, marginals.m))
    upper = RankOnePlusDenseBound(marginals.u, marginals.v, 2.0, noise, float(delta))
    return CapacityBounds(zero_bound(marginals.n, marginals.m), upper)


def generate(spec: GenSpec) -> tuple[ProblemInstance, int]:
    """Build the instance for ``spec``; returns it with the number of resampled draws.

    Uniform-capacity families redraw the marginals with seed ``seed + k``
    until the instance is feasible.
    """
    size = spec.size
    if spec.is_2d:
        cost = gen_cost_2d(spec.n, spec.h_x if spec.h_x is not None else spec.h, spec.h_y
                           if spec.h_y is not None else spec.h)
    else:
        cost = gen_cost_1d(spec.n, spec.h)

    if spec.family.startswith("marginal"):
        marg = gen_marginals(size, spec.seed)
        bounds = gen_marginal_capacity(marg, spec.delta, spec.seed)
        return ProblemInstance(cost, marg, bounds), 0

    bounds = gen_uniform_capacity(size, spec.lam)
    for retry in range(MAX_RETRIES + 1):
        marg = gen_marginals(size, spec.seed + retry)
        inst = ProblemInstance(cost, marg, bounds)
        if validate_feasibility(inst).ok:
            return inst, retry
    raise GenerationError(f"no feasible draw after {MAX_RETRIES} retries; "
                          f"lambda={spec.lam} is too small for n={size}")
