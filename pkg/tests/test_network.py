import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netshield.network import (Network, build_grid, build_nguyen_dupuis, demand_destination,
                               demand_vector, shortest_paths, trace_path)


def test_grid_4x4_size():
    net = build_grid(4, 4)
    assert (net.n, net.m, len(net.edges)) == (16, 48, 24)


def test_grid_2x2_edges_pair_forward_and_backward_arcs():
    net = build_grid(2, 2)
    assert net.edges == ((0, 2), (1, 3), (4, 6), (5, 7))
    for f, b in net.edges:
        assert net.arcs[f] == net.arcs[b][::-1]


def test_nguyen_dupuis_size():
    net = build_nguyen_dupuis()
    assert (net.n, net.m, len(net.edges)) == (13, 38, 19)


@pytest.mark.parametrize("net", [build_grid(3, 3), build_grid(4, 4), build_nguyen_dupuis()])
def test_incidence_columns(net):
    N = net.incidence
    assert np.all(N.sum(axis=0) == 0)
    assert np.all(np.abs(N).sum(axis=0) == 2)
    for j, (t, h) in enumerate(net.arcs):
        assert N[t, j] == -1 and N[h, j] == 1


def test_incidence_is_read_only():
    with pytest.raises(ValueError):
        build_grid(2, 2).incidence[0, 0] = 5


def test_rejects_self_loop_and_out_of_range():
    with pytest.raises(ValueError):
        Network(2, ((0, 0),))
    with pytest.raises(ValueError):
        Network(2, ((0, 2),))


def test_json_round_trip():
    net = build_grid(3, 2)
    assert Network.from_json(net.to_json()) == net


def test_demand_vector():
    net = build_grid(2, 2)
    d = demand_vector(net, 0, 3, 8)
    assert d.tolist() == [-8, 0, 0, 8]
    assert demand_destination(d) == 3
    with pytest.raises(ValueError):
        demand_vector(net, 1, 1, 8)
    with pytest.raises(ValueError):
        demand_vector(net, 0, 1, 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_shortest_paths_match_scipy(seed):
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import dijkstra

    net = build_grid(3, 4)
    cost = np.random.default_rng(seed).uniform(0.1, 5.0, net.m)
    root = seed % net.n
    dist, pred = shortest_paths(net, cost, root)
    G = csr_matrix((cost, (net.tails, net.heads)), shape=(net.n, net.n))
    assert np.allclose(dist, dijkstra(G, indices=root))
    for v in range(net.n):
        path = trace_path(net, pred, v, root)
        assert np.isclose(cost[path].sum(), dist[v])
    rdist, rpred = shortest_paths(net, cost, root, reverse=True)
    assert np.allclose(rdist, dijkstra(G.T.tocsr(), indices=root))
    for v in range(net.n):
        path = trace_path(net, rpred, v, root, reverse=True)
        if path:
            assert net.arcs[path[0]][0] == v and net.arcs[path[-1]][1] == root


def test_unreachable_node():
    net = Network(3, ((0, 1),))
    dist, pred = shortest_paths(net, [1.0], 0)
    assert np.isinf(dist[2])
    with pytest.raises(ValueError):
        trace_path(net, pred, 2, 0)
