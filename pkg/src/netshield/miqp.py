"""Branch-and-bound for convex QPs with binary variables.

Relaxations are solved with :func:`netshield.quadprog.solve_qp`.  Fixing a
binary only changes its bounds, so every node shares the matrices of the
root problem and the QP presolve removes fixed binaries (and the big-M rows
they deactivate) before the interior-point iterations.

Search order: depth-first plunging until the first incumbent, best-bound
afterwards.  Branching picks the most fractional binary, lowest index on
ties.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .quadprog import INFEASIBLE, MAX_ITER, OPTIMAL, QpProblem, check_convexity, solve_qp

log = logging.getLogger(__name__)

NODE_LIMIT = "node_limit"
BINARY_TOL = 1e-6


@dataclass
class MiqpProblem:
    base: QpProblem
    binary_indices: np.ndarray

    def __post_init__(self):
        self.binary_indices = np.unique(np.asarray(self.binary_indices, dtype=int))
        idx = self.binary_indices
        if idx.size and (idx.min() < 0 or idx.max() >= self.base.n):
            raise ValueError("binary index out of range")
        self.base.lo[idx] = np.maximum(self.base.lo[idx], 0.0)
        self.base.hi[idx] = np.minimum(self.base.hi[idx], 1.0)


@dataclass
class MiqpSolution:
    z: np.ndarray
    objective: float
    bound: float
    gap: float
    nodes: int
    status: str
    stats: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    lo: np.ndarray = field(compare=False)
    hi: np.ndarray = field(compare=False)
    depth: int = field(compare=False, default=0)


def _gap(obj, bound):
    if not np.isfinite(obj):
        return np.inf
    return max(0.0, (obj - bound) / max(1.0, abs(obj)))


def _snapper(base: QpProblem, B):
    """Return a function moving zero-cost binaries to 0/1 inside the feasible set.

    The relaxation optimum is rarely unique: binaries that only appear in
    inequality rows and not in the objective can often be pushed to an
    integer without touching any other variable.  Interior-point solutions
    sit at the center of the optimal face, so without this step such
    binaries look maximally fractional and dominate the branching choice.
    """
    Q = base.Q.tocsc() if sp.issparse(base.Q) else sp.csc_matrix(base.Q)
    A = base.A.tocsc() if sp.issparse(base.A) else sp.csc_matrix(base.A)
    E = base.E.tocsc() if sp.issparse(base.E) else sp.csc_matrix(base.E)
    Ar = A.tocsr()
    movable = np.array([base.c[j] == 0 and Q[:, j].nnz == 0 and E[:, j].nnz == 0 for j in B], dtype=bool)
    cols = {int(j): (A.indices[A.indptr[j]:A.indptr[j + 1]], A.data[A.indptr[j]:A.indptr[j + 1]])
            for j, mv in zip(B, movable) if mv}
    slack_tol = 1e-9 * (1.0 + np.abs(base.b))

    def snap(z, free):
        z = z.copy()
        r = base.b - Ar @ z
        r = np.maximum(r, 0.0) + slack_tol
        for j in free:
            j = int(j)
            if j not in cols:
                continue
            v = z[j]
            if abs(v - round(v)) <= BINARY_TOL:
                continue
            rows, vals = cols[j]
            for t in ((0.0, 1.0) if v < 0.5 else (1.0, 0.0)):
                move = vals * (t - v)
                if np.all(move <= r[rows]):
                    z[j] = t
                    r[rows] -= move
                    break
        return z

    return snap


def solve_miqp(p: MiqpProblem, gap_tol: float = 1e-6, node_limit: int = 100000,
               initial_incumbent=None, qp_tol: float = 1e-6, leaf_tol: float = 1e-9,
               time_limit: float = None) -> MiqpSolution:
    """Solve a convex MIQP by branch-and-bound.

    Parameters
    ----------
    p : MiqpProblem
    gap_tol : float
        Relative optimality gap at which the search stops.
    node_limit : int
        Maximum number of relaxations solved.
    initial_incumbent : array, optional
        A feasible point; ignored if it violates integrality or constraints.
    qp_tol, leaf_tol : float
        QP tolerances for fractional nodes and for leaves (all binaries
        fixed), whose solutions become incumbents.
    time_limit : float, optional
        Wall-clock seconds; reaching it is reported like the node limit.
    """
    if gap_tol <= 0:
        raise ValueError("gap_tol must be positive")
    base = p.base
    check_convexity(base.Q)
    B = p.binary_indices
    t_start = time.perf_counter()
    stats = {"qp_solves": 0, "leaves": 0, "pruned": 0, "unreliable": 0}

    snap = _snapper(base, B)

    def solve(lo, hi, tol):
        stats["qp_solves"] += 1
        return solve_qp(base.with_bounds(lo, hi), tol=tol, check_convex=False)

    def leaf(z_bin_lo):
        lo, hi = base.lo.copy(), base.hi.copy()
        lo[B] = hi[B] = z_bin_lo
        stats["leaves"] += 1
        return solve(lo, hi, leaf_tol)

    best_z, best_obj = None, np.inf

    def offer(sol):
        nonlocal best_z, best_obj
        if sol.ok and sol.objective < best_obj:
            z = sol.z.copy()
            z[B] = np.round(z[B])
            best_z, best_obj = z, sol.objective
            return True
        return False

    if initial_incumbent is not None:
        z0 = np.asarray(initial_incumbent, dtype=float)
        scale = 1.0 + np.max(np.abs(base.b), initial=0.0) + np.max(np.abs(base.f), initial=0.0)
        integral = np.all(np.abs(z0[B] - np.round(z0[B])) <= BINARY_TOL)
        if z0.shape == (base.n,) and integral and base.violation(z0) <= 1e-6 * scale:
            z = z0.copy()
            z[B] = np.round(z[B])
            best_z, best_obj = z, base.objective(z)
            offer(leaf(z[B]))
        else:
            log.info("initial incumbent rejected")

    if B.size == 0:
        sol = solve(base.lo, base.hi, leaf_tol)
        if not sol.ok:
            status = INFEASIBLE if sol.status == INFEASIBLE else sol.status
            return MiqpSolution(sol.z, np.inf, np.inf, np.inf, 1, status, stats)
        return MiqpSolution(sol.z, sol.objective, sol.objective, 0.0, 1, OPTIMAL, stats)

    counter = itertools.count()
    stack = [_Node(-np.inf, next(counter), base.lo.copy(), base.hi.copy())]
    heap = []
    nodes = 0
    pruned_bound = np.inf     # smallest bound among nodes cut off inside the tolerance band
    root_bound = None
    limit_hit = False

    def cutoff():
        return best_obj - gap_tol * max(1.0, abs(best_obj)) if np.isfinite(best_obj) else np.inf

    while stack or heap:
        if best_z is not None and stack:
            for nd in stack:
                heapq.heappush(heap, nd)
            stack = []
        node = stack.pop() if stack else heapq.heappop(heap)
        if node.bound >= cutoff():
            pruned_bound = min(pruned_bound, node.bound)
            stats["pruned"] += 1
            if not stack:
                # best-bound order: everything left is at least as large
                for nd in heap:
                    pruned_bound = min(pruned_bound, nd.bound)
                heap = []
            continue
        if nodes >= node_limit or (time_limit is not None and time.perf_counter() - t_start > time_limit):
            heapq.heappush(heap, node)
            limit_hit = True
            break
        nodes += 1
        sol = solve(node.lo, node.hi, qp_tol)
        if sol.status == INFEASIBLE:
            if root_bound is None:
                root_bound = np.inf
            continue
        free = B[node.hi[B] - node.lo[B] > 0.5]
        if sol.status != OPTIMAL:
            # unreliable relaxation: branch without a bound
            stats["unreliable"] += 1
            if root_bound is None:
                root_bound = -np.inf
            if free.size == 0:
                offer(leaf(node.lo[B]))
                continue
            j, val, bound = free[0], 0.5, node.bound
        else:
            bound = max(node.bound, sol.objective)
            if root_bound is None:
                root_bound = bound
            if bound >= cutoff():
                pruned_bound = min(pruned_bound, bound)
                stats["pruned"] += 1
                continue
            zb = snap(sol.z, free)[free]
            frac = np.abs(zb - np.round(zb))
            if free.size == 0 or frac.max() <= BINARY_TOL:
                vals = node.lo[B].copy()
                vals[np.isin(B, free)] = np.round(zb)
                res = leaf(vals)
                if res.ok:
                    offer(res)
                continue
            k = int(np.flatnonzero(frac >= frac.max() - 1e-12)[0])
            j, val = free[k], zb[k]
        children = []
        for v in (0.0, 1.0):
            lo, hi = node.lo.copy(), node.hi.copy()
            lo[j] = hi[j] = v
            children.append(_Node(bound, next(counter), lo, hi, node.depth + 1))
        if best_z is None:
            # plunge: explore the rounding direction first
            first = 1 if val >= 0.5 else 0
            stack.append(children[1 - first])
            stack.append(children[first])
        else:
            for c in children:
                heapq.heappush(heap, c)

    open_bound = min([nd.bound for nd in heap + stack], default=np.inf)
    bound = min(open_bound, pruned_bound, best_obj)
    stats["seconds"] = time.perf_counter() - t_start
    stats["root_bound"] = root_bound
    if best_z is None:
        status = NODE_LIMIT if limit_hit else INFEASIBLE
        return MiqpSolution(np.full(base.n, np.nan), np.inf, bound, np.inf, nodes, status, stats)
    gap = _gap(best_obj, bound)
    status = NODE_LIMIT if limit_hit and gap > gap_tol else OPTIMAL
    return MiqpSolution(best_z, best_obj, bound, gap, nodes, status, stats)
