import json

import numpy as np
import pytest

from drmcot.core import ProblemInstance
from drmcot.gen import GenSpec, generate
from drmcot.io import InstanceFormatError, instance_from_dict, instance_to_dict, load_instance, save_instance


@pytest.mark.parametrize("family,param", [("uniform1d", 5.0), ("marginal1d", 0.0),
                                          ("marginal2d", 0.25), ("uniform2d", 5.0)])
def test_round_trip(tmp_path, family, param):
    inst, _ = generate(GenSpec(family, 4, lam=param, delta=param, seed=1))
    path = tmp_path / "inst.json"
    save_instance(inst, path)
    back = load_instance(path)
    assert type(back.cost) is type(inst.cost)
    assert type(back.upper) is type(inst.upper)
    np.testing.assert_array_equal(back.u, inst.u)
    np.testing.assert_array_equal(back.cost.dense(), inst.cost.dense())
    np.testing.assert_array_equal(back.upper.dense(), inst.upper.dense())


def test_dense_with_lower(tmp_path):
    inst = ProblemInstance.from_arrays([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5],
                                       upper=[[0.4, 0.4], [0.4, 0.4]],
                                       lower=[[0.1, 0.0], [0.0, 0.1]])
    back = instance_from_dict(json.loads(json.dumps(instance_to_dict(inst))))
    np.testing.assert_array_equal(back.lower.dense(), inst.lower.dense())


def test_lower_optional():
    doc = {"n": 1, "m": 1, "cost": {"variant": "dense", "matrix": [[2.0]]}, "u": [1], "v": [1],
           "upper": {"variant": "uniform", "value": 2.0}}
    assert instance_from_dict(doc).lower.is_zero()


@pytest.mark.parametrize("doc", [
    {"n": 1},
    {"n": 1, "m": 1, "cost": {"variant": "hexagonal"}, "u": [1], "v": [1],
     "upper": {"variant": "uniform", "value": 1}},
    {"n": 1, "m": 1, "cost": {"variant": "dense", "matrix": [[0]]}, "u": [-1], "v": [1],
     "upper": {"variant": "uniform", "value": 1}},
])
def test_bad_documents(doc):
    with pytest.raises(InstanceFormatError):
        instance_from_dict(doc)


def test_not_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{nope")
    with pytest.raises(InstanceFormatError):
        load_instance(p)
