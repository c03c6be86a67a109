"""JSON form of problem instances.

Schema (all matrices are row-major nested lists)::

    {
      "n": int, "m": int,
      "cost":  {"variant": "dense", "matrix": [[...]]}
             | {"variant": "grid1d", "h": float}
             | {"variant": "grid2d", "side": int, "h_x": float, "h_y": float},
      "u": [...], "v": [...],
      "lower"/"upper":
               {"variant": "dense", "matrix": [[...]]}
             | {"variant": "uniform", "value": float}
             | {"variant": "rank_one_plus_dense", "a": [...], "b": [...],
                "scale": float, "delta": float, "noise": [[...]] | null}
    }

``lower`` may be omitted (zero lower bound).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .core import (
    BoundSpec,
    CapacityBounds,
    CostSpec,
    DenseBound,
    DenseCost,
    Grid1DCost,
    Grid2DCost,
    Marginals,
    ProblemInstance,
    RankOnePlusDenseBound,
    UniformBound,
    zero_bound,
)


class InstanceFormatError(ValueError):
    pass


def cost_to_dict(cost: CostSpec) -> dict:
    if isinstance(cost, DenseCost):
        return {"variant": "dense", "matrix": cost.matrix.tolist()}
    if isinstance(cost, Grid1DCost):
        return {"variant": "grid1d", "h": cost.h}
    if isinstance(cost, Grid2DCost):
        return {"variant": "grid2d", "side": cost.side, "h_x": cost.h_x, "h_y": cost.h_y}
    raise TypeError(f"unsupported cost type {type(cost).__name__}")


def bound_to_dict(bound: BoundSpec) -> dict:
    if isinstance(bound, UniformBound):
        return {"variant": "uniform", "value": bound.value}
    if isinstance(bound, DenseBound):
        return {"variant": "dense", "matrix": bound.matrix.tolist()}
    if isinstance(bound, RankOnePlusDenseBound):
        return {
            "variant": "rank_one_plus_dense",
            "a": bound.a.tolist(),
            "b": bound.b.tolist(),
            "scale": bound.scale,
            "delta": bound.delta,
            "noise": None if bound.noise is None else bound.noise.tolist(),
        }
    raise TypeError(f"unsupported bound type {type(bound).__name__}")


def instance_to_dict(instance: ProblemInstance) -> dict:
    return {
        "n": instance.n,
        "m": instance.m,
        "cost": cost_to_dict(instance.cost),
        "u": instance.u.tolist(),
        "v": instance.v.tolist(),
        "lower": bound_to_dict(instance.lower),
        "upper": bound_to_dict(instance.upper),
    }


def _cost_from(d: dict, n: int) -> CostSpec:
    kind = d.get("variant")
    if kind == "dense":
        return DenseCost(np.asarray(d["matrix"], dtype=float))
    if kind == "grid1d":
        return Grid1DCost(n, float(d["h"]))
    if kind == "grid2d":
        return Grid2DCost(int(d["side"]), float(d["h_x"]), float(d["h_y"]))
    raise InstanceFormatError(f"unknown cost variant {kind!r}")


def _bound_from(d: dict | None, n: int, m: int) -> BoundSpec:
    if d is None:
        return zero_bound(n, m)
    kind = d.get("variant")
    if kind == "uniform":
        return UniformBound(n, m, float(d["value"]))
    if kind == "dense":
        return DenseBound(np.asarray(d["matrix"], dtype=float))
    if kind == "rank_one_plus_dense":
        noise = d.get("noise")
        return RankOnePlusDenseBound(
            np.asarray(d["a"], dtype=float),
            np.asarray(d["b"], dtype=float),
            float(d.get("scale", 1.0)),
            None if noise is None else np.asarray(noise, dtype=float),
            float(d.get("delta", 0.0)),
        )
    raise InstanceFormatError(f"unknown bound variant {kind!r}")


def instance_from_dict(d: dict) -> ProblemInstance:
    try:
        n, m = int(d["n"]), int(d["m"])
        marg = Marginals(d["u"], d["v"])
        cost = _cost_from(d["cost"], n)
        bounds = CapacityBounds(_bound_from(d.get("lower"), n, m),
                                _bound_from(d["upper"], n, m))
        return ProblemInstance(cost, marg, bounds)
    except InstanceFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceFormatError(f"bad instance document: {exc}") from exc


def save_instance(instance: ProblemInstance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(instance)))


def load_instance(path) -> ProblemInstance:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"{path}: not valid JSON ({exc})") from exc
    return instance_from_dict(doc)
