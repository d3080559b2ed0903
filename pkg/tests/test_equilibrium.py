import clarabel
import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from netshield.costs import BprCost, LinearCost, beckmann_potential
from netshield.equilibrium import (DisconnectedDemand, FlowObservation, all_pairs, assign_frank_wolfe,
                                   check_complementarity, generate_data, solve_tep)
from netshield.network import Network, build_grid, build_nguyen_dupuis, demand_vector


def _beckmann_oracle(net, cost, d):
    """Linear-cost equilibrium as a QP solved by an independent conic solver."""
    m = net.m
    P = sp.diags(cost.phi).tocsc()
    A = sp.vstack([sp.csc_matrix(net.incidence.astype(float)), -sp.eye(m)]).tocsc()
    b = np.concatenate([d, np.zeros(m)])
    cones = [clarabel.ZeroConeT(net.n), clarabel.NonnegativeConeT(m)]
    st_ = clarabel.DefaultSettings()
    st_.verbose = False
    st_.tol_gap_abs = st_.tol_gap_rel = st_.tol_feas = 1e-11
    sol = clarabel.DefaultSolver(P, np.asarray(cost.beta, float), A, b, cones, st_).solve()
    return np.array(sol.x)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_linear_equilibrium_matches_conic_oracle(seed):
    rng = np.random.default_rng(seed)
    net = build_grid(3, 3)
    cost = LinearCost(rng.uniform(2, 10, net.m), rng.uniform(1, 5, net.m))
    o, t = rng.choice(net.n, 2, replace=False)
    d = demand_vector(net, o, t, 8.0)
    obs = solve_tep(net, cost, d, rel_gap=1e-10)
    ref = _beckmann_oracle(net, cost, d)
    assert beckmann_potential(cost, obs.flow) == pytest.approx(beckmann_potential(cost, np.maximum(ref, 0)),
                                                              rel=1e-7, abs=1e-7)
    # the potential is strictly convex in the flow: the optimum is unique
    assert np.max(np.abs(obs.flow - ref)) <= 1e-4


@pytest.mark.parametrize("family", ["linear", "bpr"])
def test_paths_and_frank_wolfe_agree(family):
    rng = np.random.default_rng(3)
    net = build_nguyen_dupuis()
    if family == "linear":
        cost = LinearCost(rng.uniform(2, 10, net.m), rng.uniform(1, 5, net.m))
    else:
        cost = BprCost(rng.uniform(2, 10, net.m), np.full(net.m, 8.0), rng.uniform(0.1, 0.2, net.m))
    d = demand_vector(net, 0, 2, 8.0)
    obs = solve_tep(net, cost, d, rel_gap=1e-10)
    per, gap, hist, _ = assign_frank_wolfe(net, cost, [(0, 2, 8.0)], rel_gap=1e-5, max_iter=20000)
    # Frank-Wolfe is a feasible flow, so the exact equilibrium cannot beat it
    assert beckmann_potential(cost, obs.flow) <= beckmann_potential(cost, per.sum(0)) + 1e-9
    assert beckmann_potential(cost, obs.flow) == pytest.approx(beckmann_potential(cost, per.sum(0)), rel=1e-4)
    assert all(b <= a + 1e-9 for a, b in zip(hist, hist[1:]))


def test_potential_history_is_monotone():
    net = build_grid(4, 4)
    cost = BprCost(np.linspace(1, 9, net.m), np.full(net.m, 4.0), np.full(net.m, 0.15))
    obs = solve_tep(net, cost, demand_vector(net, 0, 15, 8.0))
    assert all(b <= a + 1e-9 for a, b in zip(obs.history, obs.history[1:]))


@pytest.mark.parametrize("net", [build_grid(4, 4), build_nguyen_dupuis()])
def test_complementarity_and_conservation(net):
    rng = np.random.default_rng(11)
    cost = BprCost(rng.uniform(2, 10, net.m), np.full(net.m, 8.0), rng.uniform(0.1, 0.2, net.m))
    d = demand_vector(net, 1, net.n - 1, 8.0)
    obs = solve_tep(net, cost, d)
    rep = check_complementarity(net, cost, obs)
    assert rep.passed, rep
    assert np.max(np.abs(d - net.incidence @ obs.flow)) <= 1e-6
    assert np.all(obs.potentials >= 0) and obs.potentials[obs.dest] == 0


def test_complementarity_detects_bad_flow():
    net = build_grid(2, 2)
    cost = LinearCost(np.full(net.m, 2.0), np.ones(net.m))
    obs = solve_tep(net, cost, demand_vector(net, 0, 3, 8.0))
    bad = FlowObservation(obs.flow * 0.5, obs.demand, obs.potentials)
    assert not check_complementarity(net, cost, bad).passed


def test_symmetric_grid_splits_evenly():
    net = build_grid(2, 2)
    cost = LinearCost(np.full(net.m, 2.0), np.ones(net.m))
    obs = solve_tep(net, cost, demand_vector(net, 0, 3, 8.0))
    # two disjoint 2-arc paths of equal cost carry 4 each
    assert sorted(np.round(obs.flow, 8))[-4:] == [4.0] * 4
    assert obs.potentials[0] == pytest.approx(2 * (2.0 * 4 + 1))


def test_disconnected_pair_is_named():
    net = Network(3, ((0, 1), (1, 0)))
    cost = LinearCost(np.ones(2), np.ones(2))
    with pytest.raises(DisconnectedDemand, match=r"pair \(0, 2\)"):
        generate_data(net, cost, [(0, 2, 8.0)])


def test_nonpositive_cost_rejected():
    net = build_grid(2, 2)
    cost = LinearCost(np.r_[0.0, np.ones(net.m - 1)], np.r_[0.0, np.ones(net.m - 1)])
    with pytest.raises(ValueError, match="non-positive"):
        solve_tep(net, cost, demand_vector(net, 0, 3, 8.0))


def test_all_pairs_count():
    assert len(all_pairs(build_grid(4, 4))) == 240
