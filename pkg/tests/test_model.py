import json

import numpy as np
import pytest

from podadp.instances import BenchmarkSpec, gen_benchmark, gen_random
from podadp.model import (DemandModel, ExogenousModel, Instance, PatientBatch, UtilityTable,
                          make_patterns)


def test_utility_table_checks_concavity_and_cost():
    du = np.full((1, 3, 2), np.nan)
    du[0, 1, 0] = 9.0
    du[0, 2, :] = [8.0, 9.0]
    util = UtilityTable(du)
    assert any("increase" in v for v in util.violations(7.0))
    du[0, 2, :] = [9.0, 6.5]
    assert any("unit cost" in v for v in UtilityTable(du).violations(7.0))
    du[0, 2, :] = [9.0, 8.0]
    UtilityTable(du).validate(7.0)
    assert UtilityTable(du).utility(0, 2, 2) == 17.0
    assert UtilityTable(du).utility(0, 2, 0) == 0.0


def test_exogenous_model_validation():
    with pytest.raises(ValueError):
        ExogenousModel([0, 1], [[[0.5, 0.6], [0.5, 0.5]]], 0)
    with pytest.raises(ValueError):
        ExogenousModel([0, 1], [[[0.5, 0.5], [0.5, 0.5]]], 3)
    exo = ExogenousModel.homogeneous([3, 4], [[0.7, 0.3], [0.4, 0.6]], 4, horizon=3)
    assert exo.kernels.shape == (2, 2, 2) and exo.w0_index == 1


def _base_kwargs(**over):
    rng = np.random.default_rng(0)
    du = np.full((1, 2, 1), np.nan)
    du[0, 1, 0] = 10.0
    xi, req = make_patterns(1, 2, 1, [1.0], 2, rng)
    kw = dict(T=1, R_max=2, m=2, A_max=1, c=5.0, h=1.0, b=0.0,
              exo=ExogenousModel([1], np.zeros((0, 1, 1)), 1), demand=DemandModel([1.0]),
              utility=UtilityTable(du), classes=[1.0], patterns_xi=xi, patterns_req=req)
    kw.update(over)
    return kw


def test_instance_invariants():
    Instance(**_base_kwargs())
    with pytest.raises(ValueError):
        Instance(**_base_kwargs(h=6.0))          # h < c violated
    with pytest.raises(ValueError):
        Instance(**_base_kwargs(b=-1.0))
    with pytest.raises(ValueError):
        Instance(**_base_kwargs(classes=[0.9]))
    with pytest.raises(ValueError):
        Instance(**_base_kwargs(c=10.0, h=1.0))  # marginal utility not above unit cost
    with pytest.raises(ValueError):
        Instance(**_base_kwargs(R_max=0))


def test_patterns_sum_to_demand_level():
    inst = gen_random(np.random.default_rng(1), T=2, R_max=4, n_w=2, m=3, A_max=2)
    tot = inst.patterns_req.sum(axis=3)
    assert np.all(tot == np.arange(inst.d_max + 1)[None, :, None])


def test_instance_json_roundtrip_and_hash():
    inst = gen_random(np.random.default_rng(2), T=3, R_max=3, n_w=2, m=2, A_max=2)
    doc = json.loads(inst.to_json())
    assert "0/1" in doc["utility"] or "1/1" in doc["utility"]
    back = Instance.from_dict(doc)
    assert back.to_json() == inst.to_json()
    assert back.content_hash() == inst.content_hash()


def test_benchmark_json_is_deterministic():
    a = gen_benchmark(BenchmarkSpec("Small", 4)).to_json()
    b = gen_benchmark(BenchmarkSpec("Small", 4)).to_json()
    assert a == b


def test_cum_utility_matches_greedy_dispensing():
    from podadp.dispensing import solve_dispensing
    inst = gen_random(np.random.default_rng(7), T=2, R_max=6, n_w=2, m=3, A_max=2)
    for t in range(inst.T):
        for d in range(inst.d_max + 1):
            for p in range(inst.n_patterns):
                batch = inst.batch(t, d, p)
                for z in range(inst.R_max + 1):
                    _, u = solve_dispensing(z, batch, inst.utility, inst.c)
                    assert inst.dispense_value(t, d, p, z)[0] == pytest.approx(u, abs=1e-12)


def test_batch_validation():
    with pytest.raises(ValueError):
        PatientBatch([0, 1], [1])
    with pytest.raises(ValueError):
        PatientBatch([0], [-1])
