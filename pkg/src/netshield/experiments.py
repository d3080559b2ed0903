"""Experiment harness: sample costs, fit them back, protect under three costs.

One trial draws an original cost, generates equilibrium observations for
every OD pair, recovers the cost by inverse optimization and solves the
protection problem three times (original, recovered, uniform cost) by
progressive hedging.  The three decisions are compared pairwise:

    O-IO = |u_original - u_io|,  U-IO = |u_uniform - u_io|,
    U-O  = |u_uniform - u_original|     (Euclidean norms)
"""
from __future__ import annotations

import csv
import io
import json
import logging
import os
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .costs import BprCost, LinearCost
from .equilibrium import all_pairs, generate_data
from .hedging import PhConfig, progressive_hedging
from .inverse import FAMILIES, Theta, cost_from_theta, flow_error, recover
from .network import Network, build_grid, build_nguyen_dupuis, demand_vector
from .snpp import Scenario, SnppInstance, SubproblemOptions

log = logging.getLogger(__name__)

METRICS = ("O-IO", "U-IO", "U-O")
SUMMARY_COLUMNS = ("metric", "mean", "mean_pct_budget", "ci_lo", "ci_hi", "median", "min", "max")
BOXPLOT_COLUMNS = ("metric", "min", "q1", "median", "q3", "max")
CI_LEVEL = 0.99

# parameter distributions of the original costs
LINEAR_RANGE = {"phi": (2.0, 10.0), "beta": (2.0, 10.0)}
BPR_RANGE = {"alpha": (0.1, 0.2), "t0": (2.0, 10.0)}
BPR_CAPACITY = 8.0

NETWORKS = {
    "grid4x4": lambda: build_grid(4, 4),
    "grid3x3": lambda: build_grid(3, 3),
    "grid2x2": lambda: build_grid(2, 2),
    "nguyen_dupuis": build_nguyen_dupuis,
}
# default OD pair per network; demand flows both ways
DEFAULT_OD = {"grid4x4": (0, 15), "grid3x3": (0, 8), "grid2x2": (0, 3), "nguyen_dupuis": (0, 2)}


def build_network(kind: str) -> Network:
    try:
        return NETWORKS[kind]()
    except KeyError:
        raise ValueError("unknown network %r" % kind) from None


@dataclass
class ExperimentConfig:
    id: str
    network: str
    family: str                   # "linear" or "bpr"
    trials: int = 10
    seed: int = 0
    eps: float = 0.01
    budget: float = 6.0
    amount: float = 8.0
    od: tuple = None
    scenario_edges: list = None   # undirected edge indices; None -> every other edge
    max_scenarios: int = None
    rho: float = 5.0
    max_iter: int = 300
    node_limit: int = 100000
    gap_tol: float = 1e-6
    scale: str = "paper"

    def __post_init__(self):
        if self.family not in ("linear", "bpr"):
            raise ValueError("family must be 'linear' or 'bpr'")
        if self.network not in NETWORKS:
            raise ValueError("unknown network %r" % self.network)
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if self.eps <= 0 or self.budget <= 0 or self.amount <= 0:
            raise ValueError("eps, budget and amount must be positive")
        self.od = tuple(self.od) if self.od is not None else DEFAULT_OD[self.network]
        if self.scenario_edges is not None:
            self.scenario_edges = [int(e) for e in self.scenario_edges]

    @property
    def io_family(self) -> str:
        return "linear_phi" if self.family == "linear" else "bpr_alpha"

    def ph_config(self, workers: int = 1) -> PhConfig:
        sub = SubproblemOptions(gap_tol=self.gap_tol, node_limit=self.node_limit)
        return PhConfig(self.rho, self.eps, self.max_iter, workers, sub)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["od"] = list(self.od)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(data) - known
        if extra:
            raise ValueError("unknown config keys: %s" % ", ".join(sorted(extra)))
        return cls(**data)


_PRESETS = {
    "I": ("grid4x4", "linear"),
    "II": ("grid4x4", "bpr"),
    "III": ("nguyen_dupuis", "linear"),
    "IV": ("nguyen_dupuis", "bpr"),
}


def preset(exp_id: str, scale: str = "paper", **overrides) -> ExperimentConfig:
    """Configuration of Experiment I-IV at paper or desk scale.

    Desk scale swaps the 4x4 grid for a 3x3 grid and keeps five scenarios
    and five trials on either network.
    """
    if exp_id not in _PRESETS:
        raise ValueError("experiment id must be one of I, II, III, IV")
    net, family = _PRESETS[exp_id]
    if scale == "paper":
        cfg = dict(id=exp_id, network=net, family=family, trials=10)
    elif scale == "desk":
        if net == "grid4x4":
            net = "grid3x3"
        cfg = dict(id=exp_id, network=net, family=family, trials=5, max_scenarios=5, node_limit=10)
    else:
        raise ValueError("scale must be 'paper' or 'desk'")
    cfg["scale"] = scale
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**cfg)


# ---------------------------------------------------------------------------
# building blocks


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream for one trial (Philox keyed by seed and trial)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(trial)])))


def sample_cost(family: str, m: int, rng: np.random.Generator):
    """Original cost and the parameters the inverse step treats as known."""
    if family == "linear":
        phi = rng.uniform(*LINEAR_RANGE["phi"], size=m)
        beta = rng.uniform(*LINEAR_RANGE["beta"], size=m)
        return LinearCost(phi, beta), {"beta": beta}, phi
    alpha = rng.uniform(*BPR_RANGE["alpha"], size=m)
    t0 = rng.uniform(*BPR_RANGE["t0"], size=m)
    cap = np.full(m, BPR_CAPACITY)
    return BprCost(t0, cap, alpha), {"t0": t0, "capacity": cap}, alpha


def uniform_theta(family: str, m: int) -> Theta:
    """The uninformed guess: mid-range phi (6) or the customary alpha 0.15."""
    if family in ("linear", "linear_phi"):
        return Theta("linear_phi", np.full(m, 6.0), FAMILIES["linear_phi"])
    if family in ("bpr", "bpr_alpha"):
        return Theta("bpr_alpha", np.full(m, 0.15), FAMILIES["bpr_alpha"])
    raise ValueError("unknown family %r" % family)


def default_scenarios(net: Network, edges=None, limit: int = None, damage: float = 8.0) -> list:
    """Equiprobable scenarios, each destroying one antiparallel arc pair.

    Without explicit ``edges`` every other undirected edge (odd positions in
    ``net.edges``) is vulnerable: 12 on the 4x4 grid, 9 on Nguyen-Dupuis.
    """
    if edges is None:
        edges = list(range(1, len(net.edges), 2))
    edges = list(edges)
    if limit is not None:
        edges = edges[:limit]
    if not edges:
        raise ValueError("no vulnerable edges")
    out = []
    for e in edges:
        dmg = np.zeros(net.m)
        dmg[list(net.edges[e])] = damage
        out.append(Scenario(dmg, 1.0 / len(edges)))
    return out


def od_demands(net: Network, od, amount: float) -> np.ndarray:
    """Two commodities: ``amount`` from o to d and from d to o."""
    o, d = od
    return np.array([demand_vector(net, o, d, amount), demand_vector(net, d, o, amount)])


# ---------------------------------------------------------------------------
# trials


@dataclass
class TrialResult:
    trial: int
    ok: bool
    theta_original: list = None
    theta_io: list = None
    theta_uniform: list = None
    u_original: list = None
    u_io: list = None
    u_uniform: list = None
    metrics: dict = field(default_factory=dict)
    flow_error: float = None
    io_objective: float = None
    ph: dict = field(default_factory=dict)        # per model: iterations, g, status
    timings: dict = field(default_factory=dict)
    failed_stage: str = None
    error: str = None

    def to_dict(self) -> dict:
        return asdict(self)


def compare(u_original, u_io, u_uniform) -> dict:
    u_original, u_io, u_uniform = (np.asarray(v, float) for v in (u_original, u_io, u_uniform))
    return {
        "O-IO": float(np.linalg.norm(u_original - u_io)),
        "U-IO": float(np.linalg.norm(u_uniform - u_io)),
        "U-O": float(np.linalg.norm(u_uniform - u_original)),
    }


def run_trial(cfg: ExperimentConfig, trial: int, workers: int = 1) -> TrialResult:
    """One trial; a failing stage is recorded instead of raised."""
    res = TrialResult(trial, False)
    stage = "setup"
    try:
        net = build_network(cfg.network)
        rng = trial_rng(cfg.seed, trial)
        cost, known, theta_hat = sample_cost(cfg.family, net.m, rng)
        res.theta_original = theta_hat.tolist()

        stage = "datagen"
        t = time.perf_counter()
        pairs = all_pairs(net, cfg.amount)
        obs = generate_data(net, cost, pairs)
        res.timings[stage] = time.perf_counter() - t

        stage = "fit"
        t = time.perf_counter()
        fit = recover(net, obs, cfg.io_family, known)
        res.timings[stage] = time.perf_counter() - t
        res.theta_io = fit.theta.values.tolist()
        res.io_objective = fit.objective
        cost_io = cost_from_theta(fit.theta, known)
        uni = uniform_theta(cfg.family, net.m)
        res.theta_uniform = uni.values.tolist()
        cost_uni = cost_from_theta(uni, known)

        demands = od_demands(net, cfg.od, cfg.amount)
        scen = default_scenarios(net, cfg.scenario_edges, cfg.max_scenarios)
        us = {}
        for name, c in (("original", cost), ("io", cost_io), ("uniform", cost_uni)):
            stage = "snpp_" + name
            t = time.perf_counter()
            inst = SnppInstance(net, c, demands, scen, budget=cfg.budget)
            ph = progressive_hedging(inst, cfg.ph_config(workers))
            res.timings[stage] = time.perf_counter() - t
            us[name] = ph.u_final
            res.ph[name] = {"iterations": ph.state.iteration, "g": ph.state.g, "status": ph.state.status}
        res.u_original = us["original"].tolist()
        res.u_io = us["io"].tolist()
        res.u_uniform = us["uniform"].tolist()
        res.metrics = compare(us["original"], us["io"], us["uniform"])

        if cfg.family == "bpr":
            stage = "flow_error"
            t = time.perf_counter()
            res.flow_error = flow_error(net, cost, cost_io, pairs)
            res.timings[stage] = time.perf_counter() - t
        res.ok = True
    except Exception as exc:  # recorded, the trial is reported as failed
        res.failed_stage = stage
        res.error = "%s: %s" % (type(exc).__name__, exc)
        log.error("trial %d failed in %s\n%s", trial, stage, traceback.format_exc())
    return res


# ---------------------------------------------------------------------------
# statistics and output


def summarize(results, budget: float) -> list:
    """Per metric: mean, mean as % of budget, 99% t interval, median, min, max.

    Only successful trials count.  With fewer than two the interval is
    left empty (NaN).
    """
    good = [r for r in results if r.ok]
    rows = []
    for name in METRICS:
        v = np.array([r.metrics[name] for r in good], dtype=float)
        if v.size == 0:
            rows.append({"metric": name, **{k: np.nan for k in SUMMARY_COLUMNS[1:]}})
            continue
        mean = float(v.mean())
        lo = hi = np.nan
        if v.size >= 2:
            half = stats.t.ppf(0.5 + CI_LEVEL / 2, v.size - 1) * v.std(ddof=1) / np.sqrt(v.size)
            lo, hi = mean - half, mean + half
        rows.append({
            "metric": name, "mean": mean, "mean_pct_budget": 100.0 * mean / budget,
            "ci_lo": float(lo), "ci_hi": float(hi), "median": float(np.median(v)),
            "min": float(v.min()), "max": float(v.max()),
        })
    return rows


def boxplot_rows(results) -> list:
    good = [r for r in results if r.ok]
    rows = []
    for name in METRICS:
        v = np.array([r.metrics[name] for r in good], dtype=float)
        if v.size == 0:
            rows.append({"metric": name, **{k: np.nan for k in BOXPLOT_COLUMNS[1:]}})
            continue
        q = np.percentile(v, [0, 25, 50, 75, 100])
        rows.append(dict(zip(BOXPLOT_COLUMNS, [name] + [float(x) for x in q])))
    return rows


def _fmt(v):
    if isinstance(v, str):
        return v
    if v is None or not np.isfinite(v):
        return ""
    return "%.10g" % v


def rows_to_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def timing_rows(results) -> list:
    stages = ["datagen", "fit", "snpp_original", "snpp_io", "snpp_uniform", "flow_error"]
    rows = []
    for r in results:
        row = {"trial": r.trial, "ok": int(r.ok)}
        for s in stages:
            row[s] = r.timings.get(s, np.nan)
        for name in ("original", "io", "uniform"):
            row["ph_iter_" + name] = r.ph.get(name, {}).get("iterations", np.nan)
        rows.append(row)
    return rows


def _write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_results(out_dir, cfg: ExperimentConfig, results) -> dict:
    """Write summary, box-plot and timing CSVs; returns the written paths."""
    out = Path(out_dir)
    results = sorted(results, key=lambda r: r.trial)
    paths = {
        "summary": out / "summary.csv",
        "boxplot": out / "boxplot.csv",
        "timings": out / "timings.csv",
    }
    _write(paths["summary"], rows_to_csv(summarize(results, cfg.budget), SUMMARY_COLUMNS))
    _write(paths["boxplot"], rows_to_csv(boxplot_rows(results), BOXPLOT_COLUMNS))
    trows = timing_rows(results)
    cols = list(trows[0]) if trows else ["trial"]
    _write(paths["timings"], rows_to_csv(trows, cols))
    return paths


def run_experiment(cfg: ExperimentConfig, out_dir, workers: int = 1, on_trial=None) -> list:
    """Run all trials and write the results directory.

    Trials share one pool of ``workers`` processes; inside a worker the
    scenario solves of progressive hedging run serially.  Each finished
    trial is written to ``trials/trial_<k>.json`` at once, so an
    interrupted run keeps its completed trials.
    """
    out = Path(out_dir)
    (out / "trials").mkdir(parents=True, exist_ok=True)
    _write(out / "config.json", json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    results = []

    def done(r):
        results.append(r)
        _write(out / "trials" / ("trial_%d.json" % r.trial), json.dumps(r.to_dict(), indent=2) + "\n")
        if on_trial is not None:
            on_trial(r)

    try:
        if workers > 1 and cfg.trials > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                futs = [pool.submit(run_trial, cfg, k) for k in range(cfg.trials)]
                for f in futs:
                    done(f.result())
        else:
            for k in range(cfg.trials):
                done(run_trial(cfg, k, workers))
    finally:
        write_results(out, cfg, results)
    return sorted(results, key=lambda r: r.trial)
