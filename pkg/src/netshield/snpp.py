"""Stochastic network protection: scenario models and their MIQP form.

First stage: protection levels ``u`` in ``[0, 1]`` per arc with budget
``sum(u) <= I``.  In scenario ``s`` an arc with damage ``m_a`` keeps
capacity ``cap_a - m_a (1 - u_a)``.  The second stage is a traffic
equilibrium per commodity ``k`` (one destination each) written as a
complementarity system, with a free node slack ``d`` that absorbs demand
the damaged network cannot carry::

    0 <= x^k_ij   _|_  t_ij(f) + lam^k_j - lam^k_i >= 0
    0 <= lam^k_i  _|_  q^k_i + d^k_i - (N x^k)_i   >= 0
    f = sum_k x^k <= capacity(u)

The scenario cost is ``psi'u + gamma f't(f) + penalty * sum_k |d^k|^2``.
Each complementarity pair becomes a big-M disjunction with one binary.

For BPR costs ``t`` is replaced by its piecewise-linear interpolant in an
incremental formulation: fill variables ``delta[a, j]`` in
``[0, len_j]`` with ordering binaries, ``f = sum_j delta``,
``t = t(0) + sum_j slope_j delta``, and ``f t(f)`` is the interpolant of
``x t(x)`` on the same breakpoints, hence linear in the fills.

Variable order in a scenario model::

    u (m) | x (K*m) | f (m) | lam (K*n) | d (K*n) | delta (m*S) |
    b (K*m) | b' (K*n) | z (m*(S-1))
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .costs import BprCost, LinearCost, PiecewiseLinearCost, cost_from_dict, linearize
from .equilibrium import assign_paths, node_potentials
from .miqp import MiqpProblem, MiqpSolution, solve_miqp
from .network import Network
from .quadprog import QpProblem, solve_qp

log = logging.getLogger(__name__)

D_PENALTY = 10000.0


def capacity(cap, damage, u):
    """Arc capacity after damage, restored in proportion to protection ``u``."""
    u = np.asarray(u, dtype=float)
    if np.any(u < 0) or np.any(u > 1):
        raise ValueError("protection level outside [0, 1]")
    cap = np.asarray(cap, dtype=float)
    damage = np.asarray(damage, dtype=float)
    h = np.where(damage > 0, cap - damage * (1.0 - u), cap)
    h = np.maximum(h, 0.0)
    return float(h) if h.ndim == 0 else h


def big_m(net: Network) -> float:
    """Big-M constant: 90 (a generous arc-time bound) times 2m."""
    return 90.0 * net.m * 2


@dataclass
class Scenario:
    damage: np.ndarray
    probability: float

    def __post_init__(self):
        self.damage = np.asarray(self.damage, dtype=float)
        if np.any(self.damage < 0):
            raise ValueError("damage must be nonnegative")
        if not 0 < self.probability <= 1:
            raise ValueError("scenario probability must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {"damage": self.damage.tolist(), "probability": self.probability}


@dataclass
class PhTerms:
    """Progressive-hedging additions ``w'u + rho/2 |u - anchor|^2``."""

    w: np.ndarray
    anchor: np.ndarray
    rho: float


@dataclass
class SnppInstance:
    net: Network
    cost: object                 # LinearCost or BprCost
    demands: np.ndarray          # K x n, one destination per row
    scenarios: list
    cap: np.ndarray = None
    budget: float = 6.0
    psi: np.ndarray = None
    gamma: float = 1.0
    d_penalty: float = D_PENALTY
    bigM: float = None
    segments: int = 8
    tighten: bool = True

    def __post_init__(self):
        m = self.net.m
        self.demands = np.atleast_2d(np.asarray(self.demands, dtype=float))
        if self.demands.shape[1] != self.net.n or self.demands.shape[0] < 1:
            raise ValueError("demands must be a K x n array with K >= 1")
        for q in self.demands:
            if np.sum(q > 0) != 1 or abs(q.sum()) > 1e-9 * np.abs(q).max():
                raise ValueError("each demand vector needs one destination and zero sum")
        self.cap = np.full(m, 8.0) if self.cap is None else np.broadcast_to(np.asarray(self.cap, float), (m,)).copy()
        self.psi = np.ones(m) if self.psi is None else np.broadcast_to(np.asarray(self.psi, float), (m,)).copy()
        self.bigM = big_m(self.net) if self.bigM is None else float(self.bigM)
        if self.budget <= 0 or self.bigM <= 0 or np.any(self.cap <= 0):
            raise ValueError("budget, bigM and capacities must be positive")
        if self.cost.m != m:
            raise ValueError("cost and network sizes differ")
        if not self.scenarios:
            raise ValueError("at least one scenario is required")
        for sc in self.scenarios:
            if sc.damage.shape != (m,):
                raise ValueError("scenario damage has wrong length")
            if np.any(sc.damage > self.cap + 1e-12):
                raise ValueError("damage exceeds capacity")
        total = sum(sc.probability for sc in self.scenarios)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("scenario probabilities sum to %g" % total)
        self._pwl = None
        self._eq_cache = {}

    @property
    def K(self) -> int:
        return self.demands.shape[0]

    @property
    def is_bpr(self) -> bool:
        return isinstance(self.cost, BprCost)

    @property
    def pwl(self) -> PiecewiseLinearCost:
        if not self.is_bpr:
            raise ValueError("linear costs enter the model exactly")
        if self._pwl is None:
            self._pwl = linearize(self.cost, self.segments, upper=self.cap)
        return self._pwl

    @property
    def model_cost(self):
        """The arc-time function used inside the MIQP."""
        return self.pwl if self.is_bpr else self.cost

    @property
    def vulnerable(self) -> np.ndarray:
        mask = np.zeros(self.net.m, dtype=bool)
        for sc in self.scenarios:
            mask |= sc.damage > 0
        return mask

    def commodities(self) -> list:
        """``(k, origin, dest, amount)`` for every origin of every demand row."""
        out = []
        for k, q in enumerate(self.demands):
            dest = int(np.flatnonzero(q > 0)[0])
            for o in np.flatnonzero(q < 0):
                out.append((k, int(o), dest, float(-q[o])))
        return out

    def destinations(self) -> list:
        return [int(np.flatnonzero(q > 0)[0]) for q in self.demands]

    def with_cost(self, cost) -> "SnppInstance":
        return SnppInstance(self.net, cost, self.demands, self.scenarios, self.cap, self.budget, self.psi,
                            self.gamma, self.d_penalty, self.bigM, self.segments, self.tighten)

    def to_dict(self) -> dict:
        return {
            "network": json.loads(self.net.to_json()),
            "cost": self.cost.to_dict(),
            "demands": self.demands.tolist(),
            "scenarios": [sc.to_dict() for sc in self.scenarios],
            "cap": self.cap.tolist(), "budget": self.budget, "psi": self.psi.tolist(),
            "gamma": self.gamma, "d_penalty": self.d_penalty, "bigM": self.bigM, "segments": self.segments,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SnppInstance":
        net = Network(data["network"]["node_count"], tuple(map(tuple, data["network"]["arcs"])))
        scen = [Scenario(s["damage"], s["probability"]) for s in data["scenarios"]]
        return cls(net, cost_from_dict(data["cost"]), np.array(data["demands"]), scen,
                   data.get("cap"), data.get("budget", 6.0), data.get("psi"), data.get("gamma", 1.0),
                   data.get("d_penalty", D_PENALTY), data.get("bigM"), data.get("segments", 8))


# ---------------------------------------------------------------------------
# model assembly


class _Builder:
    """Accumulates variables and sparse constraint rows."""

    def __init__(self):
        self.nv = 0
        self.lo, self.hi = [], []
        self.binaries = []
        self.rows = {"le": [], "eq": []}
        self.rhs = {"le": [], "eq": []}
        self.count = {"le": 0, "eq": 0}

    def var(self, size, lo=-np.inf, hi=np.inf, binary=False):
        idx = np.arange(self.nv, self.nv + size)
        self.nv += size
        self.lo.append(np.broadcast_to(np.asarray(lo, float), (size,)))
        self.hi.append(np.broadcast_to(np.asarray(hi, float), (size,)))
        if binary:
            self.binaries.append(idx)
        return idx

    def add(self, kind, nrows, terms, rhs):
        """``terms``: list of (row offsets, columns, values) for ``nrows`` new rows."""
        base = self.count[kind]
        for r, c, v in terms:
            r, c = np.asarray(r), np.asarray(c)
            v = np.broadcast_to(np.asarray(v, float), r.shape)
            self.rows[kind].append((base + r, c, v))
        self.rhs[kind].append(np.broadcast_to(np.asarray(rhs, float), (nrows,)))
        self.count[kind] += nrows

    def matrix(self, kind):
        if not self.rows[kind]:
            return sp.csr_matrix((0, self.nv)), np.zeros(0)
        r = np.concatenate([t[0] for t in self.rows[kind]])
        c = np.concatenate([t[1] for t in self.rows[kind]])
        v = np.concatenate([t[2] for t in self.rows[kind]])
        M = sp.csr_matrix((v, (r, c)), shape=(self.count[kind], self.nv))
        return M, np.concatenate(self.rhs[kind])


@dataclass
class ScenarioBlock:
    """Variable indices of one scenario inside a model."""

    u: np.ndarray
    x: np.ndarray       # K x m
    f: np.ndarray
    lam: np.ndarray     # K x n
    d: np.ndarray       # K x n
    delta: np.ndarray   # m x S (empty for linear costs)
    b: np.ndarray       # K x m
    bp: np.ndarray      # K x n
    z: np.ndarray       # m x (S-1)


def _add_scenario(B: _Builder, inst: SnppInstance, s: int, u_idx):
    """Append the continuous part of scenario ``s``; binaries are added later."""
    K, m, n = inst.K, inst.net.m, inst.net.n
    damaged = inst.scenarios[s].damage > 0
    x = B.var(K * m, 0.0).reshape(K, m)
    f = B.var(m, 0.0, np.where(damaged, np.inf, inst.cap))
    lam = B.var(K * n, 0.0).reshape(K, n)
    d = B.var(K * n).reshape(K, n)
    if inst.is_bpr:
        pwl = inst.pwl
        S = pwl.segments
        seglen = np.diff(pwl.breakpoints, axis=1)
        delta = B.var(m * S, 0.0, seglen.ravel()).reshape(m, S)
    else:
        delta = np.zeros((m, 0), dtype=int)
    return ScenarioBlock(u_idx, x, f, lam, d, delta, None, None, None)


def _add_scenario_rows(B: _Builder, inst: SnppInstance, s: int, blk: ScenarioBlock, weight: float, Qdiag, c):
    net, K, m, n = inst.net, inst.K, inst.net.m, inst.net.n
    M = inst.bigM
    sc = inst.scenarios[s]
    damaged = sc.damage > 0
    ar = np.arange(m)
    tails, heads = net.tails, net.heads
    x, f, lam, d, delta = blk.x, blk.f, blk.lam, blk.d, blk.delta
    blk.b = B.var(K * m, 0.0, 1.0, binary=True).reshape(K, m)
    blk.bp = B.var(K * n, 0.0, 1.0, binary=True).reshape(K, n)

    # f = sum_k x^k
    B.add("eq", m, [(ar, f, 1.0)] + [(ar, x[k], -1.0) for k in range(K)], 0.0)
    # capacity of damaged arcs: f - m_a u_a <= cap - m_a
    dam = np.flatnonzero(damaged)
    if dam.size:
        r = np.arange(dam.size)
        B.add("le", dam.size, [(r, f[dam], 1.0), (r, blk.u[dam], -sc.damage[dam])], inst.cap[dam] - sc.damage[dam])

    # arc time t = t0 + sum slope*delta (BPR) or phi f + beta (linear)
    if inst.is_bpr:
        pwl = inst.pwl
        S = pwl.segments
        B.add("eq", m, [(ar, f, 1.0)] + [(ar, delta[:, j], -1.0) for j in range(S)], 0.0)
        t_terms = [(ar, delta[:, j], pwl.slopes[:, j]) for j in range(S)]
        t_const = pwl.values[:, 0]
        gslope = np.diff(pwl.product_values(), axis=1) / np.diff(pwl.breakpoints, axis=1)
        c[delta.ravel()] += weight * inst.gamma * gslope.ravel()
        if S > 1:
            blk.z = B.var(m * (S - 1), 0.0, 1.0, binary=True).reshape(m, S - 1)
            seglen = np.diff(pwl.breakpoints, axis=1)
            for j in range(S - 1):
                # segment j full before segment j+1 starts
                B.add("le", m, [(ar, delta[:, j], -1.0), (ar, blk.z[:, j], seglen[:, j])], 0.0)
                B.add("le", m, [(ar, delta[:, j + 1], 1.0), (ar, blk.z[:, j], -seglen[:, j + 1])], 0.0)
        else:
            blk.z = np.zeros((m, 0), dtype=int)
    else:
        phi, beta = inst.cost.phi, inst.cost.beta
        t_terms = [(ar, f, phi)]
        t_const = beta
        Qdiag[f] += weight * inst.gamma * 2.0 * phi
        c[f] += weight * inst.gamma * beta
        blk.z = np.zeros((m, 0), dtype=int)

    Wt = sp.csr_matrix(net.incidence.astype(float))
    Wr, Wc = Wt.nonzero()
    Wv = np.asarray(Wt[Wr, Wc]).ravel()
    for k in range(K):
        q = inst.demands[k]
        lt, lh = lam[k][tails], lam[k][heads]
        # x <= M b  (and the implied x <= cap b)
        bound = np.minimum(inst.cap, M) if inst.tighten else np.full(m, M)
        B.add("le", m, [(ar, x[k], 1.0), (ar, blk.b[k], -bound)], 0.0)
        # t + lam_head - lam_tail >= 0
        B.add("le", m, [(r, cc, -v) for r, cc, v in t_terms] + [(ar, lh, -1.0), (ar, lt, 1.0)], t_const)
        # t + lam_head - lam_tail <= M (1 - b)
        B.add("le", m, t_terms + [(ar, lh, 1.0), (ar, lt, -1.0), (ar, blk.b[k], M)], M - t_const)
        # conservation slack q + d - N x >= 0
        nr = np.arange(n)
        B.add("le", n, [(Wr, x[k][Wc], Wv), (nr, d[k], -1.0)], q)
        # q + d - N x <= M (1 - b')
        B.add("le", n, [(Wr, x[k][Wc], -Wv), (nr, d[k], 1.0), (nr, blk.bp[k], M)], M - q)
        # lam <= M b'
        B.add("le", n, [(nr, lam[k], 1.0), (nr, blk.bp[k], -M)], 0.0)
        Qdiag[d[k]] += weight * 2.0 * inst.d_penalty


def _finish(B, Qdiag, c, offset=0.0):
    A, b = B.matrix("le")
    E, f = B.matrix("eq")
    qd = Qdiag[: B.nv].copy()
    cc = c[: B.nv].copy()
    base = QpProblem(sp.diags(qd).tocsr(), cc, A=A, b=b, E=E, f=f,
                     lo=np.concatenate(B.lo), hi=np.concatenate(B.hi), offset=offset)
    bins = np.concatenate(B.binaries) if B.binaries else np.zeros(0, dtype=int)
    return MiqpProblem(base, bins)


@dataclass
class ScenarioModel:
    problem: MiqpProblem
    blocks: list          # one ScenarioBlock per scenario in the model
    scenarios: list       # scenario indices


def _estimate_size(inst):
    K, m, n = inst.K, inst.net.m, inst.net.n
    S = inst.segments if inst.is_bpr else 0
    return m + K * m + m + 2 * K * n + m * S + K * m + K * n + m * max(S - 1, 0)


def build_scenario_subproblem(inst: SnppInstance, s: int, ph: PhTerms = None, u_fixed=None) -> ScenarioModel:
    """MIQP for scenario ``s``, optionally with PH terms or with ``u`` fixed."""
    if not 0 <= s < len(inst.scenarios):
        raise IndexError("scenario index out of range")
    m = inst.net.m
    B = _Builder()
    size = _estimate_size(inst)
    Qdiag, c = np.zeros(size), np.zeros(size)
    u = B.var(m, 0.0, 1.0)
    blk = _add_scenario(B, inst, s, u)
    _add_scenario_rows(B, inst, s, blk, 1.0, Qdiag, c)
    B.add("le", 1, [(np.zeros(m, int), u, 1.0)], inst.budget)
    c[u] += inst.psi
    offset = 0.0
    if ph is not None:
        c[u] += ph.w - ph.rho * ph.anchor
        Qdiag[u] += ph.rho
        offset = 0.5 * ph.rho * float(ph.anchor @ ph.anchor)
    model = ScenarioModel(_finish(B, Qdiag, c, offset), [blk], [s])
    if u_fixed is not None:
        uf = np.asarray(u_fixed, dtype=float)
        if uf.sum() > inst.budget + 1e-9:
            raise ValueError("fixed protection exceeds the budget")
        model.problem.base.lo[u] = uf
        model.problem.base.hi[u] = uf
    return model


def build_extensive_form(inst: SnppInstance) -> ScenarioModel:
    """All scenarios in one MIQP with a shared protection vector."""
    m = inst.net.m
    B = _Builder()
    size = _estimate_size(inst) * len(inst.scenarios)
    Qdiag, c = np.zeros(size), np.zeros(size)
    u = B.var(m, 0.0, 1.0)
    blocks = [_add_scenario(B, inst, s, u) for s in range(len(inst.scenarios))]
    for s, blk in enumerate(blocks):
        _add_scenario_rows(B, inst, s, blk, inst.scenarios[s].probability, Qdiag, c)
    B.add("le", 1, [(np.zeros(m, int), u, 1.0)], inst.budget)
    c[u] += inst.psi
    return ScenarioModel(_finish(B, Qdiag, c), blocks, list(range(len(inst.scenarios))))


# ---------------------------------------------------------------------------
# solutions


@dataclass
class ScenarioSolution:
    u: np.ndarray
    x: np.ndarray
    f: np.ndarray
    lam: np.ndarray
    d: np.ndarray
    b: np.ndarray
    bp: np.ndarray
    objective: float = np.nan          # model objective (PWL time, PH terms included)
    bound: float = -np.inf
    status: str = "optimal"
    nodes: int = 0
    delta: np.ndarray = None
    z: np.ndarray = None

    def to_dict(self) -> dict:
        return {k: (v.tolist() if isinstance(v, np.ndarray) else v)
                for k, v in self.__dict__.items() if v is not None}


def unpack(model: ScenarioModel, z: np.ndarray, i: int = 0) -> ScenarioSolution:
    blk = model.blocks[i]
    return ScenarioSolution(z[blk.u].copy(), z[blk.x], z[blk.f], z[blk.lam], z[blk.d], z[blk.b], z[blk.bp],
                            delta=z[blk.delta] if blk.delta.size else None,
                            z=z[blk.z] if blk.z is not None and blk.z.size else None)


def pack(model: ScenarioModel, sols) -> np.ndarray:
    """Model vector from per-scenario solutions (inverse of :func:`unpack`)."""
    z = np.zeros(model.problem.base.n)
    for blk, sol in zip(model.blocks, sols):
        z[blk.u] = sol.u
        z[blk.x] = sol.x
        z[blk.f] = sol.f
        z[blk.lam] = sol.lam
        z[blk.d] = sol.d
        z[blk.b] = sol.b
        z[blk.bp] = sol.bp
        if blk.delta.size:
            z[blk.delta] = sol.delta
        if blk.z is not None and blk.z.size:
            z[blk.z] = sol.z
    return z


def _fills(pwl: PiecewiseLinearCost, f):
    seglen = np.diff(pwl.breakpoints, axis=1)
    start = pwl.breakpoints[:, :-1]
    delta = np.clip(f[:, None] - start, 0.0, seglen)
    full = delta >= seglen - 1e-12
    return delta, full[:, :-1].astype(float)


def evaluate_Q(inst: SnppInstance, s: int, sol: ScenarioSolution) -> float:
    """Scenario cost with the exact arc-time function."""
    u = np.asarray(sol.u, float)
    f = np.asarray(sol.f, float)
    d = np.asarray(sol.d, float)
    t = inst.cost.evaluate(np.maximum(f, 0.0))
    return float(inst.psi @ u + inst.gamma * f @ t + inst.d_penalty * np.sum(d ** 2))


# ---------------------------------------------------------------------------
# heuristics


def _equilibrium(inst: SnppInstance, scale: float = 1.0):
    """Per-commodity equilibrium flows (K x m) on the undamaged network."""
    key = round(scale, 15)
    if key not in inst._eq_cache:
        comms = inst.commodities()
        per, _, _, _ = assign_paths(inst.net, inst.model_cost,
                                    [(o, t, a * scale) for _, o, t, a in comms], rel_gap=1e-9)
        x = np.zeros((inst.K, inst.net.m))
        for (k, _, _, _), row in zip(comms, per):
            x[k] += row
        inst._eq_cache[key] = x
    return inst._eq_cache[key].copy()


def _solution_from_flows(inst: SnppInstance, u, x) -> ScenarioSolution:
    K, m, n = inst.K, inst.net.m, inst.net.n
    f = x.sum(0)
    t = inst.model_cost.evaluate(f)
    lam = np.array([node_potentials(inst.net, t, dest) for dest in inst.destinations()])
    N = inst.net.incidence
    d = np.array([N @ x[k] - inst.demands[k] for k in range(K)])
    b = (x > 0).astype(float)
    bp = np.ones((K, n))
    sol = ScenarioSolution(np.asarray(u, float).copy(), x, f, lam, d, b, bp)
    if inst.is_bpr:
        sol.delta, sol.z = _fills(inst.pwl, f)
    return sol


def warm_start(inst: SnppInstance, s: int, u) -> ScenarioSolution:
    """A feasible scenario solution for fixed protection ``u``.

    Equilibrium flows are computed at the full demand and, if they exceed
    the damaged capacities, at the largest common fraction of the demand
    that fits; the remainder is shed into ``d``.  Potentials are shortest
    travel times to each destination.  Binaries follow the flow support.
    """
    u = np.asarray(u, dtype=float)
    if np.any(u < -1e-12) or np.any(u > 1 + 1e-12) or u.sum() > inst.budget + 1e-9:
        raise ValueError("protection vector violates bounds or budget")
    u = np.clip(u, 0.0, 1.0)
    h = capacity(inst.cap, inst.scenarios[s].damage, u)

    def fits(scale):
        return bool(np.all(_equilibrium(inst, scale).sum(0) <= h + 1e-9))

    if fits(1.0):
        scale = 1.0
    else:
        # dyadic midpoints repeat across calls, so the equilibrium cache hits
        lo, hi = 0.0, 1.0
        for _ in range(12):
            mid = 0.5 * (lo + hi)
            if fits(mid):
                lo = mid
            else:
                hi = mid
        scale = lo
    if scale <= 1e-9:
        x = np.zeros((inst.K, inst.net.m))
    else:
        x = _equilibrium(inst, scale)
    return _solution_from_flows(inst, u, x)


def _fixed_pattern(model, z):
    """Re-solve the continuous part with the binaries of ``z`` held fixed."""
    p = model.problem
    B = p.binary_indices
    lo, hi = p.base.lo.copy(), p.base.hi.copy()
    lo[B] = hi[B] = np.round(z[B])
    res = solve_qp(p.base.with_bounds(lo, hi), tol=1e-9)
    return res.z if res.ok else None


def _pattern_incumbent(inst, model, ph, u_fixed):
    """Fix binaries to the undamaged equilibrium support and solve the QP."""
    x_eq = _equilibrium(inst)
    u0 = np.zeros(inst.net.m) if u_fixed is None else np.asarray(u_fixed, float)
    sol = _solution_from_flows(inst, u0, x_eq)
    return _fixed_pattern(model, pack(model, [sol]))


@dataclass
class SubproblemOptions:
    gap_tol: float = 1e-6
    node_limit: int = 100000
    time_limit: float = None
    heuristics: bool = True


def solve_scenario(inst: SnppInstance, s: int, ph: PhTerms = None, u_fixed=None,
                   opts: SubproblemOptions = None, warm_u=None, previous: ScenarioSolution = None) -> ScenarioSolution:
    """Solve one scenario MIQP, seeded with heuristic incumbents.

    ``warm_u`` feeds :func:`warm_start`; ``previous`` is an earlier solution
    of the same scenario whose binary pattern is tried first.
    """
    opts = opts or SubproblemOptions()
    model = build_scenario_subproblem(inst, s, ph, u_fixed)
    p = model.problem
    candidates = []
    if opts.heuristics:
        z = _pattern_incumbent(inst, model, ph, u_fixed)
        if z is not None:
            candidates.append(z)
        if previous is not None:
            z = _fixed_pattern(model, pack(model, [previous]))
            if z is not None:
                candidates.append(z)
        u_ws = u_fixed if u_fixed is not None else warm_u
        if u_ws is not None:
            candidates.append(pack(model, [warm_start(inst, s, u_ws)]))
    best = None
    for z in candidates:
        if best is None or p.base.objective(z) < p.base.objective(best):
            if p.base.violation(z) <= 1e-6 * (1 + inst.bigM):
                best = z
    res = solve_miqp(p, gap_tol=opts.gap_tol, node_limit=opts.node_limit,
                     initial_incumbent=best, time_limit=opts.time_limit)
    if not np.isfinite(res.objective):
        raise RuntimeError("scenario %d: no feasible solution (%s)" % (s, res.status))
    sol = unpack(model, res.z)
    sol.objective, sol.bound, sol.status, sol.nodes = res.objective, res.bound, res.status, res.nodes
    return sol


def solve_extensive(inst: SnppInstance, opts: SubproblemOptions = None):
    """Deterministic equivalent; returns ``(u, objective, MiqpSolution)``."""
    opts = opts or SubproblemOptions()
    model = build_extensive_form(inst)
    p = model.problem
    # incumbent: per-scenario equilibrium patterns with the shared u free
    x_eq = _equilibrium(inst)
    z = pack(model, [_solution_from_flows(inst, np.zeros(inst.net.m), x_eq) for _ in inst.scenarios])
    lo, hi = p.base.lo.copy(), p.base.hi.copy()
    B = p.binary_indices
    lo[B] = hi[B] = np.round(z[B])
    seed = solve_qp(p.base.with_bounds(lo, hi), tol=1e-9)
    res = solve_miqp(p, gap_tol=opts.gap_tol, node_limit=opts.node_limit,
                     initial_incumbent=seed.z if seed.ok else None, time_limit=opts.time_limit)
    u = res.z[model.blocks[0].u]
    return u, res.objective, res


def expected_cost(inst: SnppInstance, u, opts: SubproblemOptions = None):
    """Expected model cost at fixed ``u``: psi'u once plus the scenario recourse."""
    u = np.asarray(u, float)
    total = float(inst.psi @ u)
    sols = []
    for s, sc in enumerate(inst.scenarios):
        sol = solve_scenario(inst, s, u_fixed=u, opts=opts)
        total += sc.probability * (sol.objective - float(inst.psi @ u))
        sols.append(sol)
    return total, sols
