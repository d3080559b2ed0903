import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netshield.hedging import (CONVERGED, MAX_ITER, PhConfig, convergence_metric, default_workers,
                               progressive_hedging, project_budget)
from netshield.snpp import Scenario, SnppInstance, SubproblemOptions, solve_scenario
from oracles import clarabel_qp
from test_snpp import grid_instance


def test_convergence_metric_examples():
    assert convergence_metric([[1, 0], [1, 0]], [1, 0], [0.5, 0.5]) == 0.0
    assert convergence_metric([[1, 0], [0, 1]], [1, 0], [0.5, 0.5]) == pytest.approx(1.0)
    assert convergence_metric(np.zeros((2, 3)), np.zeros(3), [0.5, 0.5]) == 0.0
    # each copy is 0.5 away in l1 and |ubar|_1 = 1
    assert convergence_metric([[1, 0], [0, 0]], [0.5, 0], [0.5, 0.5]) == pytest.approx(0.5)
    # small averages are not inflated by the normalization
    assert convergence_metric([[0.2, 0], [0, 0]], [0.1, 0], [0.5, 0.5]) == pytest.approx(0.1)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 3), min_size=1, max_size=10), st.floats(0.1, 6))
def test_projection_matches_reference(v, budget):
    v = np.array(v)
    u = project_budget(v, budget)
    n = v.size
    assert np.all(u >= 0) and np.all(u <= 1) and u.sum() <= budget + 1e-9
    status, ref = clarabel_qp(np.eye(n), -v, np.ones((1, n)), np.array([budget]), np.zeros((0, n)), np.zeros(0),
                              np.zeros(n), np.ones(n))
    assert status == "optimal"
    # the projection is at least as close to v as the reference point
    assert np.sum((u - v) ** 2) <= np.sum((ref - v) ** 2) + 1e-9
    assert np.allclose(u, ref, atol=1e-4)


def test_projection_inside_set_is_identity():
    v = np.array([0.2, 0.9, 0.0])
    assert np.allclose(project_budget(v, 6), v)


def test_config_validation():
    with pytest.raises(ValueError):
        PhConfig(rho=0)
    with pytest.raises(ValueError):
        PhConfig(workers=0)


def test_workers_env(monkeypatch):
    monkeypatch.setenv("NETSHIELD_WORKERS", "3")
    assert default_workers() == 3
    monkeypatch.setenv("NETSHIELD_WORKERS", "0")
    with pytest.raises(ValueError):
        default_workers()


def test_single_scenario_converges_immediately(tmp_path):
    inst = grid_instance(6)
    path = tmp_path / "history.csv"
    res = progressive_hedging(inst, PhConfig(eps=1e-4), history_path=path)
    assert res.state.iteration == 0 and res.state.g == 0.0 and res.state.status == CONVERGED
    assert np.allclose(res.u_final, solve_scenario(inst, 0).u, atol=1e-9)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["k", "g", "ubar_l1", "seconds"] and len(rows) == 2


def test_identical_scenarios_agree_at_round_zero():
    base = grid_instance(2)
    sc = base.scenarios[0]
    inst = SnppInstance(base.net, base.cost, base.demands, [Scenario(sc.damage, 0.5), Scenario(sc.damage, 0.5)])
    res = progressive_hedging(inst, PhConfig(eps=1e-4))
    assert res.state.iteration == 0 and res.state.g == 0.0


def test_weights_stay_balanced_and_cap_reports_max_iter():
    inst = grid_instance(1, edges=(1, 3))
    res = progressive_hedging(inst, PhConfig(eps=1e-12, max_iter=2, subproblem=SubproblemOptions(node_limit=300)))
    p = np.array([sc.probability for sc in inst.scenarios])
    # the probability-weighted sum of the dual weights is zero after every update
    assert np.allclose(p @ res.state.weights, 0.0, atol=1e-9)
    assert res.state.iteration == 2 and res.state.status == MAX_ITER
    assert [h[0] for h in res.state.history] == [0, 1, 2]
    assert res.u_final.sum() <= inst.budget + 1e-9
