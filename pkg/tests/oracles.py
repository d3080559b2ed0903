"""Independent reference solvers used by the tests.

Continuous QPs go to Clarabel (a conic interior-point code unrelated to the
package solver); MIQPs are solved by enumerating every binary assignment,
screening each with a HiGHS feasibility LP and solving the remaining QP
with Clarabel.
"""
import itertools

import clarabel
import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog


def dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def clarabel_qp(Q, c, A, b, E, f, lo, hi):
    """Solve the QP; returns ``(status, x)`` with status in {'optimal', 'infeasible', other}."""
    n = c.size
    I = np.eye(n)
    fl, fh = np.isfinite(lo), np.isfinite(hi)
    G = np.vstack([E, A, I[fh], -I[fl]])
    h = np.concatenate([f, b, hi[fh], -lo[fl]])
    cones = [clarabel.ZeroConeT(E.shape[0]), clarabel.NonnegativeConeT(G.shape[0] - E.shape[0])]
    st = clarabel.DefaultSettings()
    st.verbose = False
    st.tol_gap_abs = st.tol_gap_rel = st.tol_feas = 1e-10
    sol = clarabel.DefaultSolver(sp.csc_matrix(np.triu(Q)), c, sp.csc_matrix(G), h, cones, st).solve()
    status = str(sol.status)
    if status in ("Solved", "AlmostSolved"):
        return "optimal", np.array(sol.x)
    if status == "DualInfeasible":
        return "unbounded", None
    if "Infeasible" in status:
        return "infeasible", None
    return status, None


def solve_reference(p):
    """Reference optimum of a ``QpProblem``; ``inf`` when infeasible, ``-inf`` when unbounded."""
    lp = linprog(np.zeros(p.n), A_ub=dense(p.A) if p.A.shape[0] else None, b_ub=p.b if p.A.shape[0] else None,
                 A_eq=dense(p.E) if p.E.shape[0] else None, b_eq=p.f if p.E.shape[0] else None,
                 bounds=np.column_stack([p.lo, p.hi]), method="highs")
    if lp.status == 2:
        return np.inf, None
    status, x = clarabel_qp(dense(p.Q), p.c, dense(p.A), p.b, dense(p.E), p.f, p.lo, p.hi)
    if status == "unbounded":
        return -np.inf, None
    if status != "optimal":
        raise RuntimeError("reference solver returned %s" % status)
    return p.objective(x), x


def enumerate_miqp(mp):
    """Best objective over all binary assignments of a ``MiqpProblem``."""
    base = mp.base
    Q, A, E = dense(base.Q), dense(base.A), dense(base.E)
    bi = np.asarray(mp.binary_indices)
    free = np.setdiff1d(np.arange(base.n), bi)
    best = np.inf
    for bits in itertools.product([0.0, 1.0], repeat=bi.size):
        z = np.zeros(base.n)
        z[bi] = bits
        cf = base.c[free] + Q[np.ix_(free, bi)] @ z[bi]
        bf = base.b - A[:, bi] @ z[bi]
        ef = base.f - E[:, bi] @ z[bi]
        lo, hi = base.lo[free], base.hi[free]
        lp = linprog(np.zeros(free.size), A_ub=A[:, free], b_ub=bf, A_eq=E[:, free], b_eq=ef,
                     bounds=np.column_stack([lo, hi]), method="highs")
        if lp.status == 2:
            continue
        status, x = clarabel_qp(Q[np.ix_(free, free)], cf, A[:, free], bf, E[:, free], ef, lo, hi)
        if status != "optimal":
            continue
        z[free] = x
        best = min(best, base.objective(z))
    return best
