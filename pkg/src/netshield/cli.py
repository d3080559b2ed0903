"""Command-line entry point: ``netshield <command> ...``.

Commands
--------
datagen      equilibrium observations for a network and cost
fit          recover cost parameters from observations
snpp-solve   protection decision for one instance (PH or extensive form)
experiment   full experiment (I-IV, paper or desk scale) into a results directory
report       summary table of a results directory

Exit codes: 0 success, 2 bad input or config, 3 solver failure (or failed
trials).  Every command writes a manifest before its first result file and
finalizes it, with output hashes, at the end.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .costs import cost_from_dict
from .equilibrium import DisconnectedDemand, FlowObservation, all_pairs, generate_data
from .experiments import (DEFAULT_OD, ExperimentConfig, TrialResult, build_network, default_scenarios, od_demands,
                          preset, run_experiment, sample_cost, summarize, trial_rng, write_results)
from .hedging import PhConfig, default_workers, progressive_hedging
from .inverse import recover, theta_to_json
from .network import Network
from .schemas import DATAGEN, EXPERIMENT, OBSERVATIONS, SNPP, ConfigError, load
from .snpp import Scenario, SnppInstance, SubproblemOptions, expected_cost, solve_extensive

log = logging.getLogger("netshield")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


class RunManifest:
    """Written as ``running`` before any result, finalized with hashes after."""

    def __init__(self, path, command: str, config: dict, seed=None, inputs=()):
        self.path = Path(path)
        self.data = {
            "tool": "netshield", "version": __version__, "command": command,
            "config": config, "seed": seed, "started": _now(), "finished": None,
            "status": "running",
            "inputs": {str(p): sha256_file(p) for p in inputs},
            "outputs": {},
        }
        self.outputs = []

    def write(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        tmp = self.path.with_name(self.path.name + ".tmp")
        tmp.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")
        os.replace(tmp, self.path)

    def add(self, *paths):
        self.outputs.extend(Path(p) for p in paths)

    def finish(self, status: str):
        self.data["finished"] = _now()
        self.data["status"] = status
        self.data["outputs"] = {str(p): sha256_file(p) for p in self.outputs if p.exists()}
        self.write()


def verify_manifest(path) -> list:
    """Output files whose content no longer matches the recorded hash."""
    data = json.loads(Path(path).read_text())
    bad = []
    for p, digest in data.get("outputs", {}).items():
        if not Path(p).exists() or sha256_file(p) != digest:
            bad.append(p)
    return bad


# ---------------------------------------------------------------------------
# config helpers


def _network(spec) -> Network:
    if isinstance(spec, str):
        return build_network(spec)
    return Network(spec["node_count"], tuple(map(tuple, spec["arcs"])))


def _network_json(spec):
    return spec if isinstance(spec, str) else {"node_count": spec["node_count"], "arcs": spec["arcs"]}


def _cost(spec: dict, m: int):
    """Explicit coefficients, or a sampled original cost when only ``seed`` is given."""
    if "seed" in spec:
        cost, _, _ = sample_cost(spec["family"], m, trial_rng(spec["seed"], 0))
        return cost
    cost = cost_from_dict(spec)
    if cost.m != m:
        raise ConfigError("cost has %d arcs, network has %d" % (cost.m, m))
    return cost


def _known(cost) -> tuple:
    d = cost.to_dict()
    if d["family"] == "linear":
        return "linear_phi", {"beta": d["beta"]}
    return "bpr_alpha", {"t0": d["t0"], "capacity": d["capacity"]}


def _family(name: str) -> str:
    aliases = {"linear": "linear_phi", "linear_phi": "linear_phi", "bpr": "bpr_alpha", "bpr_alpha": "bpr_alpha"}
    if name not in aliases:
        raise ConfigError("unknown family %r" % name)
    return aliases[name]


def _write_json(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# commands


def cmd_datagen(args) -> int:
    cfg = load(args.config, DATAGEN)
    try:
        net = _network(cfg["network"])
        cost = _cost(cfg["cost"], net.m)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    amount = float(cfg.get("amount", 8.0))
    pairs = cfg.get("pairs", "all")
    if pairs == "all":
        pairs = all_pairs(net, amount)
    else:
        pairs = [(o, d, amount) for o, d in pairs]
        for o, d, _ in pairs:
            if not (0 <= o < net.n and 0 <= d < net.n) or o == d:
                raise ConfigError("invalid OD pair (%d, %d)" % (o, d))
    out = Path(args.out_dir)
    manifest = RunManifest(out / "manifest.json", "datagen", cfg, cfg["cost"].get("seed"), [args.config])
    manifest.write()
    try:
        obs = generate_data(net, cost, pairs, rel_gap=float(cfg.get("rel_gap", 1e-8)))
    except (DisconnectedDemand, ValueError, RuntimeError) as exc:
        manifest.finish("failed")
        raise SolverError(str(exc)) from exc
    family, known = _known(cost)
    path = _write_json(out / "observations.json", {
        "network": _network_json(cfg["network"]), "family": family, "known": known,
        "source_cost": cost.to_dict(), "observations": [o.to_dict() for o in obs],
    })
    manifest.add(path)
    manifest.finish("ok")
    print("%d observations -> %s" % (len(obs), path))
    return EXIT_OK


def cmd_fit(args) -> int:
    data = load(args.observations, OBSERVATIONS)
    family = _family(args.family)
    if family != data["family"]:
        raise ConfigError("family %s does not match observations (%s)" % (family, data["family"]))
    if not data["observations"]:
        raise ConfigError("no observations in %s" % args.observations)
    net = _network(data["network"])
    known = {k: np.asarray(v, float) for k, v in data["known"].items()}
    try:
        obs = [FlowObservation.from_dict(net, o) for o in data["observations"]]
    except (ValueError, IndexError) as exc:
        raise ConfigError("bad observation record: %s" % exc) from exc
    out = Path(args.out)
    manifest = RunManifest(out.with_name(out.name + ".manifest.json"), "fit", {"family": family},
                           inputs=[args.observations])
    manifest.write()
    try:
        fit = recover(net, obs, family, known)
    except (RuntimeError, ValueError) as exc:
        manifest.finish("failed")
        raise SolverError(str(exc)) from exc
    result = json.loads(theta_to_json(fit.theta, obs))
    result["io_objective"] = fit.objective
    _write_json(out, result)
    manifest.add(out)
    manifest.finish("ok")
    print("io_objective %.3e -> %s" % (fit.objective, out))
    return EXIT_OK


def _snpp_instance(cfg: dict) -> SnppInstance:
    net = _network(cfg["network"])
    cost = _cost(cfg["cost"], net.m)
    kind = cfg["network"] if isinstance(cfg["network"], str) else None
    od = cfg.get("od") or DEFAULT_OD.get(kind)
    if od is None:
        raise ConfigError("custom networks need an explicit od pair")
    demands = od_demands(net, od, float(cfg.get("amount", 8.0)))
    spec = cfg.get("scenarios", "default")
    if spec == "default":
        if not net.edges:
            raise ConfigError("default scenarios need a built-in network")
        scen = default_scenarios(net, limit=cfg.get("max_scenarios"))
    else:
        scen = []
        for sc in spec:
            arcs = list(sc.get("arcs", []))
            for e in sc.get("edges", []):
                if e >= len(net.edges):
                    raise ConfigError("edge %d out of range" % e)
                arcs.extend(net.edges[e])
            if any(a >= net.m for a in arcs):
                raise ConfigError("arc index out of range")
            dmg = np.zeros(net.m)
            dmg[arcs] = sc.get("damage", 8.0)
            scen.append(Scenario(dmg, sc.get("probability", 1.0 / len(spec))))
    return SnppInstance(net, cost, demands, scen, budget=cfg.get("budget", 6.0))


def cmd_snpp_solve(args) -> int:
    cfg = load(args.config, SNPP)
    try:
        inst = _snpp_instance(cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    sub = SubproblemOptions(gap_tol=cfg.get("gap_tol", 1e-6), node_limit=cfg.get("node_limit", 100000))
    out = Path(args.out_dir)
    manifest = RunManifest(out / "manifest.json", "snpp-solve", cfg, inputs=[args.config])
    manifest.write()
    method = cfg.get("method", "ph")
    result = {"method": method}
    try:
        if method == "ph":
            workers = args.workers or default_workers()
            ph_cfg = PhConfig(cfg.get("rho", 5.0), cfg.get("eps", 0.01), cfg.get("max_iter", 300), workers, sub)
            hist = out / "history.csv"
            res = progressive_hedging(inst, ph_cfg, history_path=hist)
            manifest.add(hist)
            u = res.u_final
            result.update(iterations=res.state.iteration, g=res.state.g, status=res.state.status)
        else:
            u, obj, mres = solve_extensive(inst, sub)
            result.update(model_objective=obj, status=mres.status, nodes=mres.nodes, gap=mres.gap)
        value, sols = expected_cost(inst, u, sub)
    except RuntimeError as exc:
        manifest.finish("failed")
        raise SolverError(str(exc)) from exc
    result.update(u=u.tolist(), expected_objective=value,
                  scenario_objectives=[s.objective for s in sols])
    path = _write_json(out / "solution.json", result)
    manifest.add(path)
    manifest.finish("ok")
    print("sum(u) = %.4f, expected objective %.4f -> %s" % (u.sum(), value, path))
    return EXIT_OK


def _experiment_config(args) -> ExperimentConfig:
    if args.config:
        data = load(args.config, EXPERIMENT)
        try:
            cfg = ExperimentConfig.from_dict(data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        for k in ("eps", "trials", "seed", "node_limit", "max_iter"):
            v = getattr(args, k)
            if v is not None:
                setattr(cfg, k, v)
        return cfg
    if args.id not in ("I", "II", "III", "IV"):
        raise ConfigError("experiment id must be one of I, II, III, IV (got %r)" % args.id)
    try:
        return preset(args.id, args.scale, eps=args.eps, trials=args.trials, seed=args.seed,
                      node_limit=args.node_limit, max_iter=args.max_iter)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def cmd_experiment(args) -> int:
    cfg = _experiment_config(args)
    out = Path(args.out)
    manifest = RunManifest(out / "manifest.json", "experiment", cfg.to_dict(), cfg.seed,
                           [args.config] if args.config else [])
    manifest.write()
    workers = args.workers or default_workers()
    status = "interrupted"
    try:
        results = run_experiment(cfg, out, workers,
                                 on_trial=lambda r: log.info("trial %d %s", r.trial, "ok" if r.ok else "FAILED"))
        status = "ok" if all(r.ok for r in results) else "failed"
    finally:
        manifest.add(out / "config.json", out / "summary.csv", out / "boxplot.csv", out / "timings.csv",
                     *sorted((out / "trials").glob("trial_*.json")))
        manifest.finish(status)
    print((out / "summary.csv").read_text(), end="")
    failed = [r.trial for r in results if not r.ok]
    if failed:
        print("failed trials: %s" % ", ".join(map(str, failed)), file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.results)
    try:
        cfg = ExperimentConfig.from_dict(json.loads((out / "config.json").read_text()))
    except (OSError, ValueError, TypeError) as exc:
        raise ConfigError("%s is not a results directory: %s" % (out, exc)) from exc
    results = []
    for p in sorted((out / "trials").glob("trial_*.json")):
        results.append(TrialResult(**json.loads(p.read_text())))
    if (out / "manifest.json").exists():
        bad = verify_manifest(out / "manifest.json")
        if bad and not args.write:
            print("warning: changed since the run: %s" % ", ".join(bad), file=sys.stderr)
    rows = summarize(results, cfg.budget)
    ok = sum(r.ok for r in results)
    print("experiment %s (%s, %s): %d/%d trials ok" % (cfg.id, cfg.network, cfg.family, ok, len(results)))
    print("%-6s %10s %8s %22s %10s" % ("metric", "mean", "%budget", "99% CI", "median"))
    for r in rows:
        print("%-6s %10.4f %7.2f%% [%9.4f, %9.4f] %10.4f" % (
            r["metric"], r["mean"], r["mean_pct_budget"], r["ci_lo"], r["ci_hi"], r["median"]))
    if args.write:
        write_results(out, cfg, results)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="netshield", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version="netshield " + __version__)
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("datagen", help="generate equilibrium observations")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("fit", help="recover cost parameters")
    p.add_argument("observations")
    p.add_argument("family", help="linear_phi or bpr_alpha (also: linear, bpr)")
    p.add_argument("out")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("snpp-solve", help="solve one protection instance")
    p.add_argument("config")
    p.add_argument("out_dir")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_snpp_solve)

    p = sub.add_parser("experiment", help="run Experiment I-IV")
    p.add_argument("--id", default="I")
    p.add_argument("--config", help="experiment config JSON instead of a preset")
    p.add_argument("--scale", choices=("paper", "desk"), default="paper")
    p.add_argument("--eps", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--node-limit", type=int)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="summarize a results directory")
    p.add_argument("results")
    p.add_argument("--write", action="store_true", help="rewrite the CSV files from the trial records")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print("solver error: %s" % exc, file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
