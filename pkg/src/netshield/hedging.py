"""Progressive hedging over the scenario MIQPs.

Each scenario keeps its own copy ``u^s`` of the protection vector.  After
every round the copies are averaged into ``ubar`` and the dual weights move
by ``rho (u^s - ubar)``; the next round adds ``w^s'u + rho/2 |u - ubar|^2``
to every scenario objective.  Round 0 has no extra terms.
"""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .snpp import PhTerms, ScenarioSolution, SnppInstance, SubproblemOptions, solve_scenario

log = logging.getLogger(__name__)

CONVERGED = "converged"
MAX_ITER = "max_iter"


def default_workers() -> int:
    """Worker count: ``NETSHIELD_WORKERS`` if set, else the usable cores."""
    env = os.environ.get("NETSHIELD_WORKERS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("NETSHIELD_WORKERS must be a positive integer")
        return n
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


@dataclass
class PhConfig:
    rho: float = 5.0
    eps: float = 0.01
    max_iter: int = 300
    workers: int = 1
    subproblem: SubproblemOptions = field(default_factory=SubproblemOptions)

    def __post_init__(self):
        if self.rho <= 0 or self.eps <= 0:
            raise ValueError("rho and eps must be positive")
        if self.max_iter < 1 or self.workers < 1:
            raise ValueError("max_iter and workers must be at least 1")


@dataclass
class PhState:
    iteration: int
    anchor: np.ndarray
    weights: np.ndarray          # one row per scenario
    g: float
    history: list = field(default_factory=list)   # (k, g, anchor, seconds)
    status: str = "running"


@dataclass
class PhResult:
    u_final: np.ndarray
    state: PhState
    per_scenario: list


def convergence_metric(us, ubar, p) -> float:
    """Probability-weighted l1 disagreement, normalized by ``max(1, |ubar|_1)``."""
    us = np.atleast_2d(np.asarray(us, dtype=float))
    ubar = np.asarray(ubar, dtype=float)
    p = np.asarray(p, dtype=float)
    spread = np.abs(us - ubar).sum(axis=1)
    return float(p @ spread / max(1.0, np.abs(ubar).sum()))


def project_budget(v, budget: float) -> np.ndarray:
    """Euclidean projection onto ``{0 <= u <= 1, sum(u) <= budget}``.

    The projection is ``clip(v - tau, 0, 1)`` with the smallest ``tau >= 0``
    meeting the budget; ``tau`` is found by bisection.
    """
    v = np.asarray(v, dtype=float)
    u = np.clip(v, 0.0, 1.0)
    if u.sum() <= budget:
        return u
    lo, hi = 0.0, float(np.max(v))
    for _ in range(200):
        tau = 0.5 * (lo + hi)
        if np.clip(v - tau, 0.0, 1.0).sum() > budget:
            lo = tau
        else:
            hi = tau
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    return np.clip(v - hi, 0.0, 1.0)


def _solve_one(args):
    inst, s, ph, opts, previous = args
    warm_u = None if previous is None else previous.u
    return solve_scenario(inst, s, ph=ph, opts=opts, warm_u=warm_u, previous=previous)


class _Runner:
    """Maps scenario solves over a process pool, or inline for one worker."""

    def __init__(self, workers, pool=None):
        self.pool = pool
        self.own = None
        if pool is None and workers > 1:
            self.own = ProcessPoolExecutor(max_workers=workers)
            self.pool = self.own

    def map(self, fn, jobs):
        if self.pool is None:
            return [fn(j) for j in jobs]
        return list(self.pool.map(fn, jobs))

    def close(self):
        if self.own is not None:
            self.own.shutdown()


def progressive_hedging(inst: SnppInstance, cfg: PhConfig = None, history_path=None, pool=None) -> PhResult:
    """Run progressive hedging until ``g <= eps`` or ``max_iter`` rounds.

    Parameters
    ----------
    inst : SnppInstance
    cfg : PhConfig, optional
    history_path : path, optional
        CSV receiving ``k, g, ubar_l1, seconds`` after every round.
    pool : Executor, optional
        Shared executor; otherwise one is created when ``cfg.workers > 1``.

    Returns
    -------
    PhResult
        ``u_final`` is the last average projected onto the budget set.
    """
    cfg = cfg or PhConfig()
    S, m = len(inst.scenarios), inst.net.m
    p = np.array([sc.probability for sc in inst.scenarios])
    runner = _Runner(cfg.workers, pool)
    out = None
    if history_path is not None:
        out = open(history_path, "w", newline="")
        writer = csv.writer(out)
        writer.writerow(["k", "g", "ubar_l1", "seconds"])
    t0 = time.perf_counter()
    w = np.zeros((S, m))
    sols = [None] * S
    state = None
    try:
        for k in range(cfg.max_iter + 1):
            if k == 0:
                jobs = [(inst, s, None, cfg.subproblem, None) for s in range(S)]
            else:
                jobs = [(inst, s, PhTerms(w[s].copy(), ubar.copy(), cfg.rho), cfg.subproblem, sols[s])
                        for s in range(S)]
            sols = runner.map(_solve_one, jobs)
            us = np.array([sol.u for sol in sols])
            ubar = p @ us
            w = w + cfg.rho * (us - ubar)
            g = convergence_metric(us, ubar, p)
            elapsed = time.perf_counter() - t0
            if state is None:
                state = PhState(k, ubar, w, g)
            state.iteration, state.anchor, state.weights, state.g = k, ubar, w, g
            state.history.append((k, g, ubar.copy(), elapsed))
            if out is not None:
                writer.writerow([k, repr(g), repr(float(np.abs(ubar).sum())), "%.3f" % elapsed])
                out.flush()
            log.debug("ph round %d: g=%.3e |ubar|=%.4f", k, g, np.abs(ubar).sum())
            if g <= cfg.eps:
                state.status = CONVERGED
                break
        else:
            state.status = MAX_ITER
    finally:
        runner.close()
        if out is not None:
            out.close()
    return PhResult(project_budget(state.anchor, inst.budget), state, sols)
