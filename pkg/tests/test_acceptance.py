"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``; the desk-scale
experiment (criterion 6) takes roughly 20 minutes on one core.
"""
import json
import time

import numpy as np
import pytest

from netshield.cli import main as cli_main
from netshield.costs import LinearCost
from netshield.equilibrium import all_pairs, check_complementarity, generate_data, solve_tep
from netshield.experiments import (build_network, default_scenarios, preset, run_experiment,
                                   sample_cost, summarize, trial_rng)
from netshield.hedging import PhConfig, progressive_hedging
from netshield.inverse import cost_from_theta, flow_error, recover
from netshield.miqp import solve_miqp
from netshield.network import Network, build_grid, build_nguyen_dupuis, demand_vector, shortest_paths
from netshield.snpp import (PhTerms, Scenario, SnppInstance, big_m, build_scenario_subproblem,
                            expected_cost, solve_extensive, solve_scenario)
from oracles import enumerate_miqp
from test_snpp import grid_instance

pytestmark = pytest.mark.slow

# (u, mask of arcs no scenario can damage) from every SNPP solved below
SPEND = []


@pytest.fixture
def report(capsys):
    def emit(k, ok, detail, seconds):
        with capsys.disabled():
            print("\ncriterion %d: %s  %s  (%.1f s)" % (k, "PASS" if ok else "FAIL", detail, seconds))
    return emit


def invulnerable(inst):
    return np.all([sc.damage == 0 for sc in inst.scenarios], axis=0)


def collect(inst, u):
    SPEND.append((np.asarray(u, float), invulnerable(inst)))


def test_criterion_1_equilibrium(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_c, worst_n, fails = 0.0, 0.0, 0
    for net in (build_grid(4, 4), build_nguyen_dupuis()):
        reach = [np.isfinite(shortest_paths(net, np.ones(net.m), o)[0]) for o in range(net.n)]
        pairs = [(o, t) for o in range(net.n) for t in range(net.n) if o != t and reach[o][t]]
        for family in ("linear", "bpr"):
            for _ in range(25):
                cost = sample_cost(family, net.m, rng)[0]
                o, t = pairs[rng.integers(len(pairs))]
                obs = solve_tep(net, cost, demand_vector(net, o, t, 8.0))
                rep = check_complementarity(net, cost, obs, tol=1e-5)
                resid = float(np.max(np.abs(obs.demand - net.incidence @ obs.flow)))
                worst_c, worst_n = max(worst_c, rep.worst), max(worst_n, resid)
                fails += (not rep.passed) or resid > 1e-6
    dt = time.perf_counter() - t0
    ok = fails == 0 and dt < 60
    report(1, ok, "100 instances, worst complementarity %.2e, worst |d-Nx| %.2e" % (worst_c, worst_n), dt)
    assert fails == 0
    assert dt < 60


def test_criterion_2_inverse_recovery(report):
    # 3x3 grid keeps 40 fits plus flow comparisons inside the time budget
    t0 = time.perf_counter()
    net = build_network("grid3x3")
    pairs = all_pairs(net)
    worst_obj, worst_fe = 0.0, 0.0
    for family, io_family in (("linear", "linear_phi"), ("bpr", "bpr_alpha")):
        for trial in range(20):
            cost, known, _ = sample_cost(family, net.m, trial_rng(31, trial))
            obs = generate_data(net, cost, pairs)
            fit = recover(net, obs, io_family, known)
            fe = flow_error(net, cost, cost_from_theta(fit.theta, known), pairs)
            worst_obj, worst_fe = max(worst_obj, fit.objective), max(worst_fe, fe)
    dt = time.perf_counter() - t0
    ok = worst_obj <= 1e-6 and worst_fe <= 1e-2 and dt < 300
    report(2, ok, "40 trials, worst io_objective %.2e, worst flow_error %.2e" % (worst_obj, worst_fe), dt)
    assert worst_obj <= 1e-6
    assert worst_fe <= 1e-2
    assert dt < 300


def test_criterion_3_big_m(report):
    t0 = time.perf_counter()
    g, nd = big_m(build_grid(4, 4)), big_m(build_nguyen_dupuis())
    ok = g == 8640 and nd == 6840
    report(3, ok, "grid4x4 %s, nguyen_dupuis %s" % (g, nd), time.perf_counter() - t0)
    assert g == 8640
    assert nd == 6840


def _two_node_instance(rng):
    net = Network(2, ((0, 1), (1, 0)))
    cost = LinearCost(rng.uniform(2, 10, 2), rng.uniform(2, 10, 2))
    dmg = np.zeros(2)
    dmg[0] = 8.0 * rng.uniform(0.25, 1.0)
    return SnppInstance(net, cost, [demand_vector(net, 0, 1, rng.uniform(1, 8))], [Scenario(dmg, 1.0)])


def _ph_terms(rng, inst):
    # weights and anchors stay zero on arcs no scenario damages, as in a PH run
    live = ~invulnerable(inst)
    m = inst.net.m
    return PhTerms(rng.normal(0, 5, m) * live, rng.uniform(0, 0.5, m) * live, 5.0)


def test_criterion_4_miqp_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(404)
    cases = [_two_node_instance(rng) for _ in range(17)]
    cases += [grid_instance(100 + k, edges=(k % 4,)) for k in range(8)]
    worst_abs, worst_rel, nbin = 0.0, 0.0, 0
    for k, inst in enumerate(cases):
        ph = _ph_terms(rng, inst) if k % 3 == 1 else None
        p = build_scenario_subproblem(inst, 0, ph).problem
        nbin = max(nbin, len(p.binary_indices))
        sol = solve_miqp(p)
        ref = enumerate_miqp(p)
        collect(inst, sol.z[build_scenario_subproblem(inst, 0, ph).blocks[0].u])
        diff = abs(sol.objective - ref)
        worst_abs = max(worst_abs, diff)
        worst_rel = max(worst_rel, diff / max(1.0, abs(ref)))
    dt = time.perf_counter() - t0
    ok = worst_abs <= 1e-6 and dt < 120
    report(4, ok, "25 subproblems (<= %d binaries), worst diff %.2e abs, %.2e rel" % (nbin, worst_abs, worst_rel), dt)
    assert nbin <= 12
    assert worst_abs <= 1e-6
    assert dt < 120


def test_criterion_5_hedging_vs_extensive(report):
    t0 = time.perf_counter()
    net = build_grid(2, 2)
    rng = np.random.default_rng(1)
    cost = LinearCost(rng.uniform(2, 10, net.m), rng.uniform(2, 10, net.m))
    scen = []
    for e in (1, 3):
        dmg = np.zeros(net.m)
        dmg[list(net.edges[e])] = 8.0
        scen.append(Scenario(dmg, 0.5))
    inst = SnppInstance(net, cost, [demand_vector(net, 0, 3, 8.0)], scen)
    u_ef, obj_ef, _ = solve_extensive(inst)
    ph = progressive_hedging(inst, PhConfig(rho=5.0, eps=1e-4))
    e_ph, sols = expected_cost(inst, ph.u_final)
    collect(inst, u_ef)
    collect(inst, ph.u_final)
    for s in sols:
        collect(inst, s.u)
    dist = float(np.max(np.abs(ph.u_final - u_ef)))
    rel = abs(e_ph - obj_ef) / abs(obj_ef)
    dt = time.perf_counter() - t0
    ok = dist <= 0.05 and rel <= 0.01 and dt < 120
    report(5, ok, "|u_ph - u_ef|inf %.2e, objective %.6g vs %.6g (rel %.2e), %d PH rounds"
           % (dist, e_ph, obj_ef, rel, ph.state.iteration), dt)
    assert dist <= 0.05
    assert rel <= 0.01
    assert dt < 120


def test_criterion_6_desk_experiment_ordering(report, tmp_path):
    t0 = time.perf_counter()
    cfg = preset("I", "desk", eps=0.01, seed=7)
    results = run_experiment(cfg, tmp_path, workers=1)
    dt = time.perf_counter() - t0
    net = build_network(cfg.network)
    mask = np.all([sc.damage == 0 for sc in default_scenarios(net, cfg.scenario_edges, cfg.max_scenarios)], axis=0)
    for r in results:
        if r.ok:
            for u in (r.u_original, r.u_io, r.u_uniform):
                SPEND.append((np.asarray(u), mask))
    assert all(r.ok for r in results), [r.error for r in results if not r.ok]
    mean = {row["metric"]: row["mean"] for row in summarize(results, cfg.budget)}
    ok1 = mean["O-IO"] <= 0.2 * mean["U-IO"]
    ok2 = abs(mean["U-IO"] - mean["U-O"]) <= 0.2 * mean["U-O"]
    ok = ok1 and ok2 and dt < 1800
    report(6, ok, "%d trials, mean O-IO %.3g, U-IO %.3g, U-O %.3g (serial, 1 worker)"
           % (len(results), mean["O-IO"], mean["U-IO"], mean["U-O"]), dt)
    assert ok1
    assert ok2
    assert dt < 1800


def test_criterion_8_determinism(report, tmp_path):
    t0 = time.perf_counter()
    cfg = preset("I", "desk", trials=2, seed=3, max_iter=3, node_limit=5, max_scenarios=2)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg.to_dict()))
    outs = []
    for k in range(2):
        out = tmp_path / ("run%d" % k)
        assert cli_main(["experiment", "--config", str(path), "--workers", "1", "--out", str(out)]) == 0
        outs.append((out / "summary.csv").read_bytes())
    same = outs[0] == outs[1]
    report(8, same, "two CLI runs, summary.csv %s (%d bytes)" % ("identical" if same else "DIFFERS", len(outs[0])),
           time.perf_counter() - t0)
    assert same


def test_criterion_7_invulnerable_spend(report):
    # fresh solves so the check stands on its own, plus whatever the tests above collected
    t0 = time.perf_counter()
    for seed, edges, K, family in ((7, (0,), 1, "linear"), (8, (1, 2), 2, "linear"), (9, (3,), 1, "bpr")):
        inst = grid_instance(seed, edges=edges, K=K, family=family)
        for s in range(len(inst.scenarios)):
            collect(inst, solve_scenario(inst, s).u)
        if len(inst.scenarios) == 1:
            collect(inst, solve_extensive(inst)[0])
    worst = max(float(np.abs(u[mask]).sum()) for u, mask in SPEND)
    ok = worst <= 1e-6
    report(7, ok, "%d solutions, worst spend on invulnerable arcs %.2e" % (len(SPEND), worst),
           time.perf_counter() - t0)
    assert worst <= 1e-6
