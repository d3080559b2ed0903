"""Inverse optimization: recover cost parameters from equilibrium flows.

For each observed flow ``x^j`` with demand ``d^j`` we look for parameters
``theta`` and node potentials ``y^j`` that are dual feasible
(``y_tail - y_head <= c_a(x^j; theta)``, ``y^j >= 0``) and make the duality
gap ``c(x^j; theta)' x^j + d^j' y^j`` as small as possible.  The gaps
``eps_j`` are minimized in the least-squares sense.  Both cost families are
affine in the unknown at a fixed flow::

    linear:  c_a = x_a * phi_a + beta_a
    BPR:     c_a = t0_a (x_a / cap_a)^4 * alpha_a + t0_a

so the fit is a convex QP.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .costs import BprCost, LinearCost
from .equilibrium import generate_data
from .network import Network
from .quadprog import QpProblem, solve_qp

FAMILIES = {"linear_phi": (2.0, 10.0), "bpr_alpha": (0.1, 0.2)}


@dataclass
class Theta:
    family: str
    values: np.ndarray
    bounds: tuple

    def to_dict(self) -> dict:
        return {"family": self.family, "values": self.values.tolist(), "bounds": list(self.bounds)}


@dataclass
class IoSolution:
    theta: Theta
    duals: np.ndarray        # J x n
    epsilons: np.ndarray
    objective: float
    status: str = "optimal"


def _affine_terms(net, observations, family, known):
    """Per observation: (coef, const) with c_a(x^j) = coef_a * theta_a + const_a."""
    m = net.m
    terms = []
    for ob in observations:
        x = np.asarray(ob.flow, dtype=float)
        if x.shape != (m,):
            raise ValueError("observation flow has wrong length")
        if family == "linear_phi":
            if "beta" not in known:
                raise ValueError("linear family needs known beta")
            terms.append((x.copy(), np.broadcast_to(np.asarray(known["beta"], float), (m,)).copy()))
        elif family == "bpr_alpha":
            if "t0" not in known or "capacity" not in known:
                raise ValueError("BPR family needs known t0 and capacity")
            t0 = np.broadcast_to(np.asarray(known["t0"], float), (m,))
            cap = np.broadcast_to(np.asarray(known["capacity"], float), (m,))
            terms.append((t0 * (x / cap) ** 4, t0.copy()))
        else:
            raise ValueError("unknown family %r" % family)
    return terms


def build_io_qp(net: Network, observations, family: str, known: dict, bounds=None) -> QpProblem:
    """The inverse-optimization QP.

    Variables are ordered ``theta (m), y^1 .. y^J (n each), eps (J)``.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("at least one observation is required")
    lo_t, hi_t = FAMILIES[family] if bounds is None else bounds
    terms = _affine_terms(net, observations, family, known)
    n, m, J = net.n, net.m, len(observations)
    nv = m + J * n + J
    tails, heads = net.tails, net.heads
    rows, cols, vals = [], [], []
    b = []
    r = 0
    arange = np.arange(m)
    for j, (ob, (coef, const)) in enumerate(zip(observations, terms)):
        y0 = m + j * n
        # dual feasibility: y_tail - y_head - coef*theta <= const
        ridx = r + arange
        rows += [ridx, ridx, ridx]
        cols += [y0 + tails, y0 + heads, arange]
        vals += [np.ones(m), -np.ones(m), -coef]
        b.append(const)
        r += m
        # gap: sum coef x theta + d'y - eps <= -sum const x
        x = np.asarray(ob.flow, float)
        d = np.asarray(ob.demand, float)
        nz = np.flatnonzero(d)
        rows += [np.full(m, r), np.full(nz.size, r), np.array([r])]
        cols += [arange, y0 + nz, np.array([m + J * n + j])]
        vals += [coef * x, d[nz], np.array([-1.0])]
        b.append(np.array([-const @ x]))
        r += 1
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r, nv))
    Q = sp.diags(np.concatenate([np.zeros(m + J * n), 2.0 * np.ones(J)])).tocsr()
    lo = np.concatenate([np.full(m, lo_t), np.zeros(J * n), np.full(J, -np.inf)])
    hi = np.concatenate([np.full(m, hi_t), np.full(J * n, np.inf), np.full(J, np.inf)])
    return QpProblem(Q, np.zeros(nv), A=A, b=np.concatenate(b), lo=lo, hi=hi)


def truth_point(net: Network, observations, family: str, known: dict, theta) -> np.ndarray:
    """Feasible point at known parameters: observed potentials and exact gaps."""
    observations = list(observations)
    terms = _affine_terms(net, observations, family, known)
    theta = np.asarray(theta, float)
    J = len(observations)
    eps = np.array([(coef * theta + const) @ np.asarray(ob.flow, float) + np.asarray(ob.demand, float) @ ob.potentials
                    for ob, (coef, const) in zip(observations, terms)])
    return np.concatenate([theta] + [np.asarray(ob.potentials, float) for ob in observations] + [eps])


def recover(net: Network, observations, family: str, known: dict, tol: float = 1e-9) -> IoSolution:
    """Fit the unknown cost parameters to the observations."""
    observations = list(observations)
    p = build_io_qp(net, observations, family, known)
    sol = solve_qp(p, tol=tol, max_iter=200)
    if not sol.ok:
        raise RuntimeError("inverse QP failed: %s" % sol.status)
    n, m, J = net.n, net.m, len(observations)
    lo, hi = FAMILIES[family]
    theta = Theta(family, np.clip(sol.z[:m], lo, hi), (lo, hi))
    duals = sol.z[m:m + J * n].reshape(J, n)
    eps = sol.z[m + J * n:]
    return IoSolution(theta, duals, eps, float(eps @ eps), sol.status)


def cost_from_theta(theta: Theta, known: dict):
    if theta.family == "linear_phi":
        return LinearCost(theta.values, known["beta"])
    return BprCost(known["t0"], known["capacity"], theta.values)


def flow_error(net: Network, cost_true, cost_recovered, pairs) -> float:
    """Frobenius norm between the equilibrium flow matrices of two costs."""
    if type(cost_true) is not type(cost_recovered):
        raise ValueError("costs must be of the same family")
    pairs = list(pairs)
    if not pairs:
        return 0.0
    a = np.array([o.flow for o in generate_data(net, cost_true, pairs)])
    b = np.array([o.flow for o in generate_data(net, cost_recovered, pairs)])
    return float(np.linalg.norm(a - b))


def observation_hash(observations) -> str:
    h = hashlib.sha256()
    for ob in observations:
        h.update(json.dumps(ob.to_dict(), sort_keys=True).encode())
    return h.hexdigest()


def theta_to_json(theta: Theta, observations) -> str:
    data = theta.to_dict()
    data["observations_sha256"] = observation_hash(observations)
    return json.dumps(data)
