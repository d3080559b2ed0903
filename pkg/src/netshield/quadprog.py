"""Convex quadratic programming by a primal-dual interior-point method.

Problems have the form::

    minimize    1/2 z'Qz + c'z + offset
    subject to  A z <= b
                E z  = f
                lo <= z <= hi

with ``Q`` symmetric positive semidefinite.  Infinite bounds are allowed.

A light presolve runs before the interior-point iterations: variables with
``lo == hi`` are substituted out, constraint rows that touch a single
variable become bounds, and pairs of opposite inequality rows become
equalities.  This matters for branch-and-bound, where fixing binaries turns
many big-M rows into bounds.  All multipliers are mapped back to the
original rows.

Termination is on the KKT residuals of the row-equilibrated problem (each
row of ``A`` and ``E`` scaled to unit infinity norm).
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"

_DENSE_LIMIT = 600
_FIX_TOL = 1e-12
_TRACE = False
_STALL_WINDOW = 6


class NonconvexError(ValueError):
    """Raised when the quadratic term has negative curvature."""


@dataclass
class QpProblem:
    """Container for a convex QP.  Matrices may be dense or scipy.sparse."""

    Q: object
    c: np.ndarray
    A: object = None
    b: np.ndarray = None
    E: object = None
    f: np.ndarray = None
    lo: np.ndarray = None
    hi: np.ndarray = None
    offset: float = 0.0

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.Q = _as_matrix(self.Q, (n, n))
        self.A, self.b = _as_block(self.A, self.b, n, "inequality")
        self.E, self.f = _as_block(self.E, self.f, n, "equality")
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float).copy()
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float).copy()
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise ValueError("dimension mismatch: bounds must have length %d" % n)

    @property
    def n(self) -> int:
        return self.c.size

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ (self.Q @ z) + self.c @ z + self.offset)

    def violation(self, z: np.ndarray) -> float:
        """Largest absolute constraint violation at ``z``."""
        v = 0.0
        if self.A.shape[0]:
            v = max(v, float(np.max(self.A @ z - self.b, initial=0.0)))
        if self.E.shape[0]:
            v = max(v, float(np.max(np.abs(self.E @ z - self.f))))
        v = max(v, float(np.max(self.lo - z, initial=0.0)), float(np.max(z - self.hi, initial=0.0)))
        return v

    def with_bounds(self, lo: np.ndarray, hi: np.ndarray) -> "QpProblem":
        """Shallow copy sharing the matrices, with new bounds."""
        q = QpProblem(self.Q, self.c, self.A, self.b, self.E, self.f, lo, hi, self.offset)
        q._struct = _structure(self)
        return q


@dataclass
class QpSolution:
    z: np.ndarray
    status: str
    objective: float
    duals: dict = field(default_factory=dict)
    iterations: int = 0
    residuals: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _as_matrix(M, shape):
    if M is None:
        return sp.csr_matrix(shape)
    if sp.issparse(M):
        M = M.tocsr().astype(float)
    else:
        M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape != shape:
        raise ValueError("dimension mismatch: expected %s, got %s" % (shape, M.shape))
    return M


def _as_block(M, rhs, n, name):
    if M is None:
        return sp.csr_matrix((0, n)), np.zeros(0)
    if sp.issparse(M):
        M = M.tocsr().astype(float)
    else:
        M = np.atleast_2d(np.asarray(M, dtype=float))
    rhs = np.asarray(rhs, dtype=float).ravel()
    if M.shape[1] != n or M.shape[0] != rhs.size:
        raise ValueError("dimension mismatch in %s constraints" % name)
    return M, rhs


def check_convexity(Q, tol: float = 1e-9) -> None:
    """Raise NonconvexError if ``Q`` is not symmetric positive semidefinite.

    Only the rows and columns with nonzero entries are examined, so large
    problems with a small quadratic block stay cheap.
    """
    if not sp.issparse(Q):
        Q = np.asarray(Q, dtype=float)
        scale = max(1.0, float(np.abs(Q).max(initial=0.0)))
        if np.abs(Q - Q.T).max(initial=0.0) > tol * scale:
            raise NonconvexError("nonconvex objective: Q is not symmetric")
        rows = np.flatnonzero(np.abs(Q).max(axis=1) > 0) if Q.size else np.zeros(0, dtype=int)
        if rows.size == 0:
            return
        sub = Q[np.ix_(rows, rows)]
        if np.count_nonzero(sub - np.diag(np.diag(sub))) == 0:
            lam = np.diag(sub).min()
        else:
            lam = np.linalg.eigvalsh(sub).min()
        if lam < -tol * scale:
            raise NonconvexError("nonconvex objective: negative curvature %.3g" % lam)
        return
    Qs = sp.csr_matrix(Q)
    if Qs.nnz == 0:
        return
    asym = abs(Qs - Qs.T)
    scale = max(1.0, float(abs(Qs).max()))
    if asym.nnz and asym.max() > tol * scale:
        raise NonconvexError("nonconvex objective: Q is not symmetric")
    rows = np.unique(Qs.nonzero()[0])
    sub = Qs[rows][:, rows]
    if sub.shape[0] == len(rows) and (sub - sp.diags(sub.diagonal())).nnz == 0:
        lam = sub.diagonal().min()
    else:
        lam = np.linalg.eigvalsh(sub.toarray()).min()
    if lam < -tol * scale:
        raise NonconvexError("nonconvex objective: negative curvature %.3g" % lam)


# ---------------------------------------------------------------------------
# presolve


class _Structure:
    """Matrix data shared by every bound variant of one problem."""

    def __init__(self, p: QpProblem):
        n = p.n
        self.dense = n <= _DENSE_LIMIT and p.A.shape[0] <= 5 * _DENSE_LIMIT
        conv = _to_dense if self.dense else sp.csr_matrix
        self.Q = conv(p.Q)
        self.A = conv(p.A)
        self.E = conv(p.E)
        self.Apat = (abs(self.A) > 0).astype(float)
        self.Epat = (abs(self.E) > 0).astype(float)
        self.AT = self.A.T.copy() if self.dense else self.A.T.tocsr()
        self.ET = self.E.T.copy() if self.dense else self.E.T.tocsr()
        self.probe = np.random.default_rng(12345).uniform(1.0, 2.0, n)
        self.convex = False


def _to_dense(M):
    return M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)


def _structure(p: QpProblem) -> _Structure:
    st = getattr(p, "_struct", None)
    if st is None:
        st = _Structure(p)
        p._struct = st
    return st


def _row(M, r):
    if sp.issparse(M):
        row = M.getrow(r)
        return row.indices, row.data
    idx = np.flatnonzero(M[r])
    return idx, M[r, idx]


def _sub(M, rows, cols, dense):
    if dense:
        return M[np.ix_(rows, cols)]
    return M[rows][:, cols]


@dataclass
class _Reduced:
    keep: np.ndarray
    zfix: np.ndarray
    rows: np.ndarray           # original A rows kept as inequalities
    eq_rows: np.ndarray        # original E rows kept
    pair_rows: list            # (r1, r2) opposite A rows turned into equalities
    lo_src: np.ndarray         # per original var: -1 or A row index that set lo
    hi_src: np.ndarray
    lo_src_eq: np.ndarray      # per original var: -1 or E row index that fixed it
    problem: QpProblem


def _fixed_mask(lo, hi):
    return np.isfinite(lo) & (np.abs(hi - lo) <= _FIX_TOL * np.maximum(1.0, np.abs(lo)))


def _presolve(p: QpProblem, st: _Structure):
    n = p.n
    lo, hi = p.lo.copy(), p.hi.copy()
    lo_src = np.full(n, -1)
    hi_src = np.full(n, -1)
    lo_src_eq = np.full(n, -1)
    activeA = np.ones(p.A.shape[0], dtype=bool)
    activeE = np.ones(p.E.shape[0], dtype=bool)
    A, E = st.A, st.E

    for _ in range(6):
        fixed = _fixed_mask(lo, hi)
        free = (~fixed).astype(float)
        zf = np.where(fixed, lo, 0.0)
        changed = False
        if activeA.any():
            cnt = np.asarray(st.Apat @ free).ravel()
            rhs_all = p.b - np.asarray(A @ zf).ravel()
            for r in np.flatnonzero(activeA & (cnt <= 1.5)):
                rhs = rhs_all[r]
                activeA[r] = False
                if cnt[r] < 0.5:
                    if rhs < -1e-9 * max(1.0, abs(p.b[r])):
                        return None, ("row %d" % r, -rhs)
                    continue
                idx, val = _row(A, r)
                k = np.flatnonzero(~fixed[idx])[0]
                j, a = idx[k], val[k]
                bound = rhs / a
                if a > 0 and bound < hi[j]:
                    hi[j], hi_src[j] = bound, r
                    changed = True
                elif a < 0 and bound > lo[j]:
                    lo[j], lo_src[j] = bound, r
                    changed = True
        if activeE.any():
            cnt = np.asarray(st.Epat @ free).ravel()
            rhs_all = p.f - np.asarray(E @ zf).ravel()
            for r in np.flatnonzero(activeE & (cnt <= 1.5)):
                rhs = rhs_all[r]
                activeE[r] = False
                if cnt[r] < 0.5:
                    if abs(rhs) > 1e-9 * max(1.0, abs(p.f[r])):
                        return None, ("equality %d" % r, abs(rhs))
                    continue
                idx, val = _row(E, r)
                k = np.flatnonzero(~fixed[idx])[0]
                j, a = idx[k], val[k]
                v = rhs / a
                tol = 1e-9 * max(1.0, abs(v))
                if v < lo[j] - tol or v > hi[j] + tol:
                    return None, ("equality %d" % r, float(max(lo[j] - v, v - hi[j])))
                lo[j] = hi[j] = v
                lo_src_eq[j] = r
                changed = True
        bad = lo > hi + 1e-9 * np.maximum(1.0, np.abs(lo))
        if bad.any():
            j = int(np.flatnonzero(bad)[0])
            return None, ("bounds of variable %d" % j, float(lo[j] - hi[j]))
        hi = np.maximum(hi, lo)
        if not changed:
            break

    fixed = _fixed_mask(lo, hi)
    zfix = np.where(fixed, lo, 0.0)
    keep = np.flatnonzero(~fixed)
    rows = np.flatnonzero(activeA)

    # opposite rows (after dropping fixed columns) become equalities
    pair_rows = []
    if rows.size > 1:
        probe = np.where(fixed, 0.0, st.probe)
        key = np.asarray(A[rows] @ probe).ravel()
        Ar_abs = abs(_sub(A, rows, keep, st.dense))
        scale = np.asarray(Ar_abs.max(axis=1).toarray() if sp.issparse(Ar_abs) else Ar_abs.max(axis=1)).ravel()
        scale[scale == 0] = 1.0
        key = key / scale
        cand = np.flatnonzero(np.isin(-key, key) & (key != 0))
        if cand.size:
            rhs = (p.b[rows] - np.asarray(A[rows] @ zfix).ravel()) / scale
            lookup = {}
            for i in cand:
                lookup.setdefault(key[i], []).append(i)
            used = set()
            for i in cand:
                if i in used or key[i] < 0:
                    continue
                for j in lookup.get(-key[i], []):
                    if j in used:
                        continue
                    ri = _sub(A, rows[[i]], keep, st.dense)
                    rj = _sub(A, rows[[j]], keep, st.dense)
                    diff = ri / scale[i] + rj / scale[j]
                    if abs(diff).max() <= 1e-12 and abs(rhs[i] + rhs[j]) <= 1e-12 * max(1.0, abs(rhs[i])):
                        pair_rows.append((rows[i], rows[j]))
                        used.update((i, j))
                        break
            if used:
                rows = np.delete(rows, sorted(used))
    eq_rows = np.flatnonzero(activeE)

    Q = st.Q
    Qr = _sub(Q, keep, keep, st.dense)
    cr = p.c[keep]
    if fixed.any():
        cr = cr + np.asarray(Q[keep] @ zfix).ravel()
    offset = p.offset + float(0.5 * zfix @ (Q @ zfix) + p.c @ zfix)
    Ar = _sub(A, rows, keep, st.dense)
    br = p.b[rows] - np.asarray(A[rows] @ zfix).ravel() if rows.size else np.zeros(0)
    r1 = np.array([a for a, _ in pair_rows], dtype=int)
    parts = [_sub(E, eq_rows, keep, st.dense), _sub(A, r1, keep, st.dense)]
    Er = np.vstack(parts) if st.dense else sp.vstack(parts).tocsr()
    fr = np.concatenate([
        p.f[eq_rows] - (np.asarray(E[eq_rows] @ zfix).ravel() if eq_rows.size else 0.0),
        p.b[r1] - (np.asarray(A[r1] @ zfix).ravel() if r1.size else 0.0),
    ])
    red = QpProblem(Qr, cr, Ar, br, Er, fr, lo[keep], hi[keep], offset)
    return _Reduced(keep, zfix, rows, eq_rows, pair_rows, lo_src, hi_src, lo_src_eq, red), None


# ---------------------------------------------------------------------------
# interior point core


class _Kkt:
    """Factorization of the augmented system [[H, C'], [C, -D]].

    ``C`` stacks the inequality rows (with ``D = s/z``) over the equality
    rows (``D = 0``). A small regularization keeps the pivots away from zero
    and ``solve`` refines against the unregularized matrix.
    """

    def __init__(self, H, C, D, delta, dense):
        self.n = H.shape[0]
        self.dense = dense
        n, mc = self.n, C.shape[0]
        if dense:
            K = np.zeros((n + mc, n + mc))
            K[:n, :n] = H
            if mc:
                K[n:, :n] = C
                K[:n, n:] = C.T
                K[np.arange(n, n + mc), np.arange(n, n + mc)] = -D
            self.K = K
            reg = K.copy()
            reg[np.diag_indices(n)] += delta
            reg[np.arange(n, n + mc), np.arange(n, n + mc)] -= delta
            with warnings.catch_warnings():
                # a zero pivot yields non-finite steps, which the caller treats as a stall
                warnings.simplefilter("ignore", sla.LinAlgWarning)
                self.lu = sla.lu_factor(reg, check_finite=False)
        else:
            K = sp.bmat([[H, C.T], [C, sp.diags(-D)]], format="csc") if mc else sp.csc_matrix(H)
            self.K = K
            dreg = np.concatenate([np.full(n, delta), np.full(mc, -delta)])
            # the regularized matrix is quasi-definite: symmetric ordering, diagonal pivots
            self.lu = spla.splu(sp.csc_matrix(K + sp.diags(dreg)), permc_spec="MMD_AT_PLUS_A",
                                diag_pivot_thresh=0.0, options={"SymmetricMode": True})

    def _apply(self, rhs):
        return sla.lu_solve(self.lu, rhs, check_finite=False) if self.dense else self.lu.solve(rhs)

    def solve(self, rhs, refine=2):
        sol = self._apply(rhs)
        for _ in range(refine):
            sol = sol + self._apply(rhs - self.K @ sol)
        return sol


def _ipm(p: QpProblem, tol: float, max_iter: int, x0=None, stall=True, augmented=False):
    """Mehrotra predictor-corrector on the presolved problem.

    The Newton system is condensed to the variables (``augmented=False``,
    small and fast) or keeps the inequality rows as unknowns, which stays
    accurate when some ``z/s`` ratios are huge on degenerate problems.
    """
    n = p.n
    dense = n + p.A.shape[0] <= _DENSE_LIMIT
    if dense:
        Q = p.Q.toarray() if sp.issparse(p.Q) else p.Q
        A = p.A.toarray() if sp.issparse(p.A) else p.A
        E = p.E.toarray() if sp.issparse(p.E) else p.E
    else:
        Q, A, E = sp.csr_matrix(p.Q), sp.csr_matrix(p.A), sp.csr_matrix(p.E)

    # row equilibration
    ra = np.abs(A).max(axis=1) if A.shape[0] else np.zeros(0)
    re = np.abs(E).max(axis=1) if E.shape[0] else np.zeros(0)
    ra = np.asarray(ra.toarray() if sp.issparse(ra) else ra).ravel()
    re = np.asarray(re.toarray() if sp.issparse(re) else re).ravel()
    ra[ra == 0] = 1.0
    re[re == 0] = 1.0
    if dense:
        A = A / ra[:, None]
        E = E / re[:, None]
    else:
        A = sp.diags(1 / ra) @ A
        E = sp.diags(1 / re) @ E
    b = p.b / ra
    f = p.f / re
    c = p.c

    U = np.flatnonzero(np.isfinite(p.hi))
    L = np.flatnonzero(np.isfinite(p.lo))
    hiU, loL = p.hi[U], p.lo[L]
    mA, mU, mL = A.shape[0], U.size, L.size
    mi = mA + mU + mL
    me = E.shape[0]

    def G(x):
        return np.concatenate([A @ x, x[U], -x[L]])

    def GT(v):
        out = A.T @ v[:mA] if mA else np.zeros(n)
        out = np.asarray(out, dtype=float).ravel().copy()
        out[U] += v[mA:mA + mU]
        out[L] -= v[mA + mU:]
        return out

    h = np.concatenate([b, hiU, -loL])
    scale_c = 1.0 + np.max(np.abs(c), initial=0.0)
    scale_h = 1.0 + max(np.max(np.abs(h), initial=0.0), np.max(np.abs(f), initial=0.0))
    delta = 1e-8

    C = (np.vstack([A, E]) if dense else sp.vstack([A, E], format="csr")) if mA + me else A
    AT = A.T if dense else A.T.tocsr()

    def build_H(W):
        # bounds always go into the diagonal; general rows only when condensed
        d = np.zeros(n)
        d[U] += W[mA:mA + mU]
        d[L] += W[mA + mU:]
        if dense:
            H = Q + (AT * W[:mA]) @ A if (mA and not augmented) else np.array(Q, dtype=float)
            H[np.diag_indices(n)] += d
            return H
        H = Q + sp.diags(d)
        if mA and not augmented:
            H = H + AT @ sp.diags(W[:mA]) @ A
        return sp.csc_matrix(H)

    def build_kkt(W):
        if augmented:
            D = np.concatenate([1.0 / W[:mA], np.zeros(me)])
            return _Kkt(build_H(W), C, D, delta, dense)
        return _Kkt(build_H(W), E, np.zeros(me), delta, dense)

    def GTb(v):
        # transpose of the bound rows only
        out = np.zeros(n)
        out[U] += v[mA:mA + mU]
        out[L] -= v[mA + mU:]
        return out

    # starting point
    W0 = np.ones(mi)
    kkt = build_kkt(W0)
    if augmented:
        rhs = np.concatenate([-c + GTb(h), b, f])
    else:
        rhs = np.concatenate([-c + GT(h), f])
    sol = kkt.solve(rhs, refine=0)
    x = sol[:n] if x0 is None else np.asarray(x0, dtype=float).copy()
    y = np.zeros(me)
    s = h - G(x)
    z = np.ones(mi)
    if mi:
        s = np.maximum(s, 1.0)
        gap = s @ z
        s = s + 0.5 * gap / z.sum()
        z = z + 0.5 * gap / s.sum()

    status = MAX_ITER
    it = 0
    res = {}
    primal_hist = []
    for it in range(1, max_iter + 1):
        Qx = Q @ x
        rd = Qx + c + GT(z) + (E.T @ y if me else 0.0)
        rp = G(x) + s - h
        rE = E @ x - f if me else np.zeros(0)
        mu = (s @ z) / mi if mi else 0.0
        pobj = 0.5 * x @ Qx + c @ x
        res = {
            "stationarity": float(np.max(np.abs(rd), initial=0.0)) / scale_c,
            "primal": max(float(np.max(np.abs(rp), initial=0.0)), float(np.max(np.abs(rE), initial=0.0))) / scale_h,
            "complementarity": float(s @ z) / (1.0 + abs(pobj)) if mi else 0.0,
        }
        if _TRACE: print(it, res, mu)
        if max(res.values()) <= tol:
            status = OPTIMAL
            break
        # primal infeasibility certificate
        if mi:
            dual_norm = max(np.max(np.abs(z)), np.max(np.abs(y), initial=0.0))
            if dual_norm > 1e6 * scale_c:
                cert = h @ z + (f @ y if me else 0.0)
                lin = GT(z) + (E.T @ y if me else 0.0)
                if cert < 0 and np.max(np.abs(lin)) <= 1e-6 * abs(cert) and res["primal"] > tol:
                    status = INFEASIBLE
                    res["certificate"] = float(np.max(np.abs(lin)) / abs(cert))
                    break
        if np.max(np.abs(x), initial=0.0) > 1e12:
            status = UNBOUNDED
            break
        # stalled primal residual with complementarity already small
        primal_hist.append(res["primal"])
        if not np.isfinite(list(res.values())).all():
            status = "stalled"
            res["primal"] = np.inf
            break
        if (stall and it > _STALL_WINDOW and res["primal"] > tol
                and res["primal"] > 0.5 * primal_hist[-1 - _STALL_WINDOW]):
            status = "stalled"
            break

        W = z / s if mi else np.zeros(0)
        kkt = build_kkt(W)

        def direction(rc):
            t = (-rc + z * rp) / s
            if augmented:
                sol = kkt.solve(np.concatenate([-rd - GTb(t), -t[:mA] / W[:mA], -rE]))
                dx, dy = sol[:n], sol[n + mA:]
                Gdx = G(dx)
                dz = t + W * Gdx
                dz[:mA] = sol[n:n + mA]
            else:
                sol = kkt.solve(np.concatenate([-rd - GT(t), -rE]))
                dx, dy = sol[:n], sol[n:]
                Gdx = G(dx)
                dz = t + W * Gdx
            ds = -rp - Gdx
            return dx, dy, ds, dz

        def step(v, dv):
            neg = dv < 0
            if not neg.any():
                return 1.0
            return min(1.0, float(np.min(-v[neg] / dv[neg])))

        rc = s * z
        dx, dy, ds, dz = direction(rc)
        a_aff = min(step(s, ds), step(z, dz)) if mi else 1.0
        if mi:
            mu_aff = ((s + a_aff * ds) @ (z + a_aff * dz)) / mi
            sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
            # do not let complementarity run far below what tol asks for
            floor = 1e-2 * tol * (1.0 + abs(pobj)) / mi
            rc = s * z + ds * dz - max(sigma * mu, floor)
            dx, dy, ds, dz = direction(rc)
            alpha = min(1.0, 0.99 * min(step(s, ds), step(z, dz)))
        else:
            alpha = 1.0
        x = x + alpha * dx
        y = y + alpha * dy
        s = s + alpha * ds
        z = z + alpha * dz
        if mi:
            s = np.maximum(s, 1e-300)
            z = np.maximum(z, 1e-300)

    # unscale multipliers: rows were divided by ra/re
    muA = z[:mA] / ra
    etaU = np.zeros(n)
    etaU[U] = z[mA:mA + mU]
    etaL = np.zeros(n)
    etaL[L] = z[mA + mU:]
    nu = y / re
    return x, muA, nu, etaL, etaU, status, it, res


def solve_qp(p: QpProblem, tol: float = 1e-8, max_iter: int = 100, x0=None, check_convex: bool = True) -> QpSolution:
    """Solve a convex QP.

    Parameters
    ----------
    p : QpProblem
    tol : float
        Bound on the scaled KKT residuals (stationarity, primal feasibility,
        complementarity) at an optimal return.
    max_iter : int
        Interior-point iteration cap.
    x0 : array, optional
        Initial primal point in the full variable space.

    Returns
    -------
    QpSolution
        ``duals`` holds ``ineq`` (one per row of A, >= 0), ``eq`` (one per
        row of E), ``lower`` and ``upper`` (bound multipliers, >= 0).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    st = _structure(p)
    if check_convex and not st.convex:
        check_convexity(p.Q)
        st.convex = True
    red, infeas = _presolve(p, st)
    n = p.n
    if red is None:
        where, amount = infeas
        return QpSolution(np.full(n, np.nan), INFEASIBLE, np.inf,
                          residuals={"certificate": float(amount), "where": where})
    r = red.problem
    if r.n == 0:
        xr = np.zeros(0)
        muA = np.zeros(r.A.shape[0])
        nu = np.zeros(r.E.shape[0])
        etaL = etaU = np.zeros(0)
        status, it, res = OPTIMAL, 0, {}
        if r.A.shape[0] and np.any(r.b < -1e-9):
            status = INFEASIBLE
        if r.E.shape[0] and np.any(np.abs(r.f) > 1e-9):
            status = INFEASIBLE
    else:
        x0r = None if x0 is None else np.asarray(x0, dtype=float)[red.keep]
    if r.n and red.pair_rows:
        # new equalities can expose further singleton rows: presolve again
        inner = solve_qp(r, tol, max_iter, x0r, check_convex=False)
        if inner.status == INFEASIBLE:
            z = red.zfix.copy()
            z[red.keep] = inner.z
            return QpSolution(z, INFEASIBLE, np.inf, iterations=inner.iterations, residuals=inner.residuals)
        xr, status, it, res = inner.z, inner.status, inner.iterations, inner.residuals
        d = inner.duals
        muA, nu, etaL, etaU = d["ineq"], d["eq"], d["lower"], d["upper"]
    elif r.n:
        xr, muA, nu, etaL, etaU, status, it, res = _ipm(r, tol, max_iter, x0r)
        if status in (MAX_ITER, "stalled"):
            # the condensed system loses accuracy on degenerate problems
            xr, muA, nu, etaL, etaU, status, it2, res = _ipm(r, tol, max_iter, x0r, augmented=True)
            it += it2
        if status == "stalled":
            # a stalled primal residual is settled by a phase-one LP
            if _phase_one_feasible(r):
                xr, muA, nu, etaL, etaU, status, it2, res = _ipm(r, tol, max_iter, x0r, stall=False,
                                                                 augmented=True)
                it += it2
                if status == "stalled":
                    status = MAX_ITER
            else:
                status = INFEASIBLE
                res = dict(res, certificate=float(res["primal"]), where="phase one")
        elif status == MAX_ITER and not res.get("primal", 0.0) <= tol and not _phase_one_feasible(r):
            status = INFEASIBLE
            res = dict(res, certificate=float(res["primal"]), where="phase one")
        if status == MAX_ITER and _has_descent_ray(r):
            status = UNBOUNDED
    z = red.zfix.copy()
    z[red.keep] = xr
    if status == INFEASIBLE:
        return QpSolution(z, status, np.inf, iterations=it, residuals=res)
    if status == UNBOUNDED:
        return QpSolution(z, status, -np.inf, iterations=it, residuals=res)

    # map multipliers back to the original problem
    mA, mE = p.A.shape[0], p.E.shape[0]
    ineq = np.zeros(mA)
    eq = np.zeros(mE)
    ineq[red.rows] = muA
    n_eq_kept = red.eq_rows.size
    eq[red.eq_rows] = nu[:n_eq_kept]
    for (r1, r2), v in zip(red.pair_rows, nu[n_eq_kept:]):
        ineq[r1] = max(v, 0.0)
        ineq[r2] = max(-v, 0.0)
    lower = np.zeros(n)
    upper = np.zeros(n)
    lower[red.keep] = etaL
    upper[red.keep] = etaU
    # bounds that came from rows hand their multiplier to the row
    grad = np.asarray(st.Q @ z).ravel() + p.c + np.asarray(st.AT @ ineq).ravel() + np.asarray(st.ET @ eq).ravel()
    fixed = np.ones(n, dtype=bool)
    fixed[red.keep] = False
    for j in np.flatnonzero(fixed):
        g = grad[j]
        if red.lo_src_eq[j] >= 0:
            r = red.lo_src_eq[j]
            idx, val = _row(st.E, r)
            a = float(val[idx == j][0])
            eq[r] += -g / a
            grad[idx] += val * (-g / a)
            continue
        if g >= 0:
            lower[j] = g
        else:
            upper[j] = -g
    for j in np.flatnonzero((upper > 0) & (red.hi_src >= 0)):
        r = red.hi_src[j]
        idx, val = _row(st.A, r)
        ineq[r] += upper[j] / float(val[idx == j][0])
        upper[j] = 0.0
    for j in np.flatnonzero((lower > 0) & (red.lo_src >= 0)):
        r = red.lo_src[j]
        idx, val = _row(st.A, r)
        ineq[r] += lower[j] / -float(val[idx == j][0])
        lower[j] = 0.0

    duals = {"ineq": ineq, "eq": eq, "lower": lower, "upper": upper}
    res = dict(res)
    res["certificate"] = res.get("certificate", 0.0)
    return QpSolution(z, status, p.objective(z), duals, it, res)


def _phase_one_feasible(p: QpProblem) -> bool:
    """Whether the constraint set of ``p`` is nonempty (HiGHS phase one)."""
    from scipy.optimize import linprog

    A = p.A if p.A.shape[0] else None
    E = p.E if p.E.shape[0] else None
    bounds = np.column_stack([np.where(np.isfinite(p.lo), p.lo, -np.inf), np.where(np.isfinite(p.hi), p.hi, np.inf)])
    r = linprog(np.zeros(p.n), A_ub=A, b_ub=p.b if A is not None else None,
                A_eq=E, b_eq=p.f if E is not None else None, bounds=bounds, method="highs")
    return r.status != 2


def _has_descent_ray(p: QpProblem) -> bool:
    """Whether a direction with ``Qd = 0`` and ``c'd < 0`` stays feasible.

    For a feasible convex QP such a ray is exactly what makes the objective
    unbounded below.  Checked with an LP over the box ``|d| <= 1``.
    """
    from scipy.optimize import linprog

    Q = sp.csr_matrix(p.Q)
    A = p.A if p.A.shape[0] else None
    E = sp.vstack([Q, sp.csr_matrix(p.E)]) if p.E.shape[0] else Q
    bounds = np.column_stack([np.where(np.isfinite(p.lo), 0.0, -1.0), np.where(np.isfinite(p.hi), 0.0, 1.0)])
    r = linprog(p.c, A_ub=A, b_ub=np.zeros(p.A.shape[0]) if A is not None else None,
                A_eq=E, b_eq=np.zeros(E.shape[0]), bounds=bounds, method="highs")
    return r.status == 0 and r.fun < -1e-7 * (1.0 + np.max(np.abs(p.c), initial=0.0))


def dual_objective(p: QpProblem, sol: QpSolution) -> float:
    """Lagrangian dual value at the returned primal-dual pair."""
    z, d = sol.z, sol.duals
    lo = np.where(np.isfinite(p.lo), p.lo, 0.0)
    hi = np.where(np.isfinite(p.hi), p.hi, 0.0)
    return float(-0.5 * z @ (p.Q @ z) - d["ineq"] @ p.b - d["eq"] @ p.f
                 + d["lower"] @ lo - d["upper"] @ hi + p.offset)


def kkt_residuals(p: QpProblem, sol: QpSolution) -> dict:
    """Unscaled KKT residuals of a solution in the original problem."""
    z, d = sol.z, sol.duals
    grad = np.asarray(p.Q @ z).ravel() + p.c + p.A.T @ d["ineq"] + p.E.T @ d["eq"] - d["lower"] + d["upper"]
    slack = p.b - p.A @ z
    lo_gap = np.where(np.isfinite(p.lo), z - p.lo, 0.0)
    hi_gap = np.where(np.isfinite(p.hi), p.hi - z, 0.0)
    comp = np.concatenate([d["ineq"] * slack, d["lower"] * lo_gap, d["upper"] * hi_gap])
    return {
        "stationarity": float(np.max(np.abs(grad), initial=0.0)),
        "primal": p.violation(z),
        "dual": float(-min(np.min(d["ineq"], initial=0.0), np.min(d["lower"], initial=0.0),
                           np.min(d["upper"], initial=0.0))),
        "complementarity": float(np.max(np.abs(comp), initial=0.0)),
    }
