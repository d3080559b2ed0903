import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from netshield.quadprog import (INFEASIBLE, OPTIMAL, UNBOUNDED, NonconvexError, QpProblem, check_convexity,
                                dual_objective, kkt_residuals, solve_qp)
from oracles import solve_reference


def random_qp(seed, n=8, mA=6, mE=2, rank=None, sparse=False):
    rng = np.random.default_rng(seed)
    R = rng.normal(size=(rank or n, n))
    Q = R.T @ R
    c = rng.normal(size=n)
    x0 = rng.uniform(-1, 1, n)
    A = rng.normal(size=(mA, n))
    b = A @ x0 + rng.uniform(0, 1, mA)
    E = rng.normal(size=(mE, n))
    f = E @ x0
    lo = np.where(rng.random(n) < 0.5, -2.0, -np.inf)
    hi = np.where(rng.random(n) < 0.5, 2.0, np.inf)
    if sparse:
        Q, A, E = sp.csr_matrix(Q), sp.csr_matrix(A), sp.csr_matrix(E)
    return QpProblem(Q, c, A=A, b=b, E=E, f=f, lo=lo, hi=hi)


def test_unconstrained():
    sol = solve_qp(QpProblem(np.diag([2.0, 4.0]), [-6.0, 8.0]))
    assert sol.ok
    assert np.allclose(sol.z, [3.0, -2.0], atol=1e-7)


def test_equality_dual():
    # min x1^2 + x2^2 s.t. x1 + x2 = 2 -> x = (1, 1), multiplier -2
    sol = solve_qp(QpProblem(2 * np.eye(2), np.zeros(2), E=[[1.0, 1.0]], f=[2.0]))
    assert np.allclose(sol.z, [1, 1], atol=1e-7)
    assert sol.duals["eq"][0] == pytest.approx(-2.0, abs=1e-6)


def test_infeasible_box_and_rows():
    p = QpProblem(np.eye(2), np.zeros(2), A=[[1.0, 1.0]], b=[-1.0], lo=[0, 0], hi=[1, 1])
    assert solve_qp(p).status == INFEASIBLE
    p = QpProblem(np.eye(2), np.zeros(2), A=[[1.0, 0.0], [-1.0, 0.0]], b=[1.0, -2.0])
    assert solve_qp(p).status == INFEASIBLE


def test_nonconvex_rejected():
    with pytest.raises(NonconvexError):
        check_convexity(np.diag([1.0, -1.0]))
    with pytest.raises(NonconvexError):
        solve_qp(QpProblem(np.diag([1.0, -1.0]), np.zeros(2)))


def test_fixed_variables_and_singleton_rows_are_presolved():
    # x2 fixed at 1; the row 2*x1 <= 1 becomes a bound
    p = QpProblem(np.eye(2), [-5.0, 0.0], A=[[2.0, 0.0]], b=[1.0], lo=[-np.inf, 1.0], hi=[np.inf, 1.0])
    sol = solve_qp(p)
    assert np.allclose(sol.z, [0.5, 1.0], atol=1e-8)
    assert sol.duals["ineq"][0] == pytest.approx(2.25, abs=1e-6)


def test_opposite_rows_become_equality():
    p = QpProblem(np.eye(2), np.zeros(2), A=[[1.0, 1.0], [-1.0, -1.0]], b=[2.0, -2.0])
    sol = solve_qp(p)
    assert np.allclose(sol.z, [1, 1], atol=1e-7)
    res = kkt_residuals(p, sol)
    assert max(res.values()) <= 1e-6


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.booleans(), st.booleans())
def test_matches_reference_solver(seed, low_rank, sparse):
    p = random_qp(seed, rank=3 if low_rank else None, sparse=sparse)
    ref, _ = solve_reference(p)
    sol = solve_qp(p, tol=1e-9)
    if ref == -np.inf:
        assert sol.status == UNBOUNDED
        return
    if not np.isfinite(ref):
        assert sol.status == INFEASIBLE
        return
    assert sol.status == OPTIMAL
    assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
    res = kkt_residuals(p, sol)
    scale = 1 + np.abs(p.c).max()
    assert res["primal"] <= 1e-6 and res["dual"] <= 1e-8
    assert res["stationarity"] <= 1e-5 * scale
    # weak duality with a near-zero gap
    assert dual_objective(p, sol) == pytest.approx(sol.objective, rel=1e-5, abs=1e-5)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_random_infeasible_rows_detected(seed):
    p = random_qp(seed, n=5, mA=4, mE=0)
    # append a row contradicting the first one
    A = np.vstack([p.A.toarray() if sp.issparse(p.A) else p.A, -p.A[0]])
    b = np.append(p.b, -p.b[0] - 1.0)
    q = QpProblem(p.Q, p.c, A=A, b=b, lo=p.lo, hi=p.hi)
    assert solve_qp(q).status == INFEASIBLE


def test_offset_in_objective():
    p = QpProblem(np.eye(1), [0.0], offset=3.5)
    assert solve_qp(p).objective == pytest.approx(3.5)


def test_bad_dimensions():
    with pytest.raises(ValueError):
        QpProblem(np.eye(2), np.zeros(2), lo=np.zeros(3))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_sparse_factorization_path(seed):
    import netshield.quadprog as qp

    old = qp._DENSE_LIMIT
    qp._DENSE_LIMIT = 0
    try:
        p = random_qp(seed, n=12, mA=9, mE=3, rank=5, sparse=True)
        ref, _ = solve_reference(p)
        sol = solve_qp(p, tol=1e-9)
    finally:
        qp._DENSE_LIMIT = old
    if ref == -np.inf:
        assert sol.status == UNBOUNDED
    elif not np.isfinite(ref):
        assert sol.status == INFEASIBLE
    else:
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)


def test_unbounded_detected():
    # rank-deficient Q with a free direction of descent
    p = QpProblem(np.diag([1.0, 0.0]), [0.0, -1.0], A=[[1.0, 0.0]], b=[3.0])
    sol = solve_qp(p)
    assert sol.status == UNBOUNDED
    assert sol.objective == -np.inf


def test_unbounded_seed_from_property_search():
    import netshield.quadprog as qp

    old = qp._DENSE_LIMIT
    qp._DENSE_LIMIT = 0
    try:
        p = random_qp(2187310, n=12, mA=9, mE=3, rank=5, sparse=True)
        assert solve_reference(p)[0] == -np.inf
        assert solve_qp(p, tol=1e-9).status == UNBOUNDED
    finally:
        qp._DENSE_LIMIT = old
