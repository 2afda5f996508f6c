import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dlm.sparse import (LassoError, lasso_objective, lasso_oracle, lasso_solve,
                        sparse_code_blocks)


def kkt_violation(A, x, lam, a):
    c = A.T @ (x - A @ a)
    on = a != 0
    v = np.maximum(np.abs(c) - lam, 0.0)
    v[on] = np.abs(c[on] - lam * np.sign(a[on]))
    return v.max()


def test_scalar_soft_threshold():
    res = lasso_solve([1.0], [[1.0]], 0.3)
    assert res.alpha == pytest.approx([0.7], abs=1e-12)
    assert res.converged


def test_zero_solution_above_lambda_max():
    res = lasso_solve([1.0, 0.0], [[0.6], [0.8]], 0.7)
    assert res.alpha[0] == 0.0
    assert res.objective == pytest.approx(0.5)


def test_random_8x4_matches_oracle(rng):
    A = rng.standard_normal((8, 4))
    x = rng.standard_normal(8)
    got = lasso_solve(x, A, 0.1)
    assert got.objective - lasso_oracle(x, A, 0.1).objective < 1e-8


def test_objective_examples(rng):
    A = rng.standard_normal((5, 5))
    x = rng.standard_normal(5)
    assert lasso_objective(x, A, 0.4, np.zeros(5)) == pytest.approx(0.5 * x @ x, rel=1e-15)
    ls = np.linalg.solve(A, x)
    assert lasso_objective(x, A, 0.0, ls) < 1e-20
    a = rng.standard_normal(5)
    direct = 0.5 * sum((x[i] - sum(A[i, k] * a[k] for k in range(5))) ** 2 for i in range(5)) \
        + 0.4 * sum(abs(v) for v in a)
    assert lasso_objective(x, A, 0.4, a) == pytest.approx(direct, rel=1e-12)
    with pytest.raises(ValueError):
        lasso_objective(x, A, 0.4, np.zeros(4))


def test_oracle_limits(rng):
    A = rng.standard_normal((6, 3))
    x = rng.standard_normal(6)
    assert np.all(lasso_oracle(x, A, 1e6).alpha == 0)
    ls = np.linalg.lstsq(A, x, rcond=None)[0]
    assert np.allclose(lasso_oracle(x, A, 0.0).alpha, ls, atol=1e-10)
    with pytest.raises(LassoError):
        lasso_oracle(np.zeros(2), np.zeros((2, 13)), 0.1)


def test_solution_satisfies_kkt(rng):
    for _ in range(20):
        q, p = rng.integers(3, 20), rng.integers(1, 40)
        A = rng.standard_normal((q, p))
        x = rng.standard_normal(q)
        lam = rng.uniform(0.01, 1.0)
        res = lasso_solve(x, A, lam, tol=1e-9)
        assert res.converged
        assert kkt_violation(A, x, lam, res.alpha) <= 1e-9 * 1.0001
        assert res.objective == pytest.approx(lasso_objective(x, A, lam, res.alpha), abs=1e-10)


def test_underdetermined_overcomplete_converges(rng):
    # more atoms than rows, small penalty: active columns become dependent
    A = rng.standard_normal((8, 40))
    x = rng.standard_normal(8)
    res = lasso_solve(x, A, 1e-3)
    assert res.converged and kkt_violation(A, x, 1e-3, res.alpha) <= 1e-7
    assert np.count_nonzero(res.alpha) <= 8


def test_callback_objective_monotone(rng):
    A = rng.standard_normal((10, 30))
    x = rng.standard_normal(10)
    seen = []
    res = lasso_solve(x, A, 0.05, callback=lambda a, obj: seen.append(obj))
    assert res.converged and len(seen) >= 2
    assert all(b <= a + 1e-12 for a, b in zip(seen, seen[1:]))


def test_unique_from_different_starts(rng):
    A = rng.standard_normal((12, 20))
    x = rng.standard_normal(12)
    a0 = lasso_solve(x, A, 0.1, tol=1e-10)
    a1 = lasso_solve(x, A, 0.1, tol=1e-10, alpha0=rng.standard_normal(20))
    assert abs(a0.objective - a1.objective) < 1e-9
    assert np.max(np.abs(a0.alpha - a1.alpha)) < 1e-6


def test_scaling_design_lowers_objective(rng):
    A = rng.standard_normal((6, 4))
    x = rng.standard_normal(6)
    a = lasso_solve(x, A, 0.2).alpha
    assert np.any(a != 0)
    base = lasso_objective(x, A, 0.2, a)
    for s in (1.1, 2.0, 5.0):
        assert lasso_objective(x, s * A, 0.2, a / s) < base
        l1 = [np.abs(lasso_solve(x, t * A, 0.2, tol=1e-10).alpha).sum() for t in (1.0, s)]
        assert l1[1] < l1[0]


def test_rejects_bad_input():
    with pytest.raises(LassoError):
        lasso_solve([np.nan], [[1.0]], 0.1)
    with pytest.raises(LassoError):
        lasso_solve([1.0], [[1.0]], -0.1)
    with pytest.raises(LassoError):
        lasso_solve([1.0], [[1.0]], 0.1, tol=0)
    with pytest.raises(ValueError):
        lasso_solve([1.0, 2.0], [[1.0]], 0.1)


def test_max_iter_reports_nonconvergence(rng):
    A = rng.standard_normal((10, 30))
    x = rng.standard_normal(10)
    res = lasso_solve(x, A, 1e-3, max_iter=1)
    assert not res.converged and res.iterations_used == 1


def test_lambda_zero_underdetermined_fits(rng):
    A = rng.standard_normal((4, 9))
    x = rng.standard_normal(4)
    res = lasso_solve(x, A, 0.0, tol=1e-9)
    assert res.objective < 1e-12


def test_blocks_match_single_solves(rng):
    N, m, n, p = 3, 4, 6, 9
    phis = rng.standard_normal((N, m, n))
    D = rng.standard_normal((n, p))
    Y = rng.standard_normal((N, m))
    codes = sparse_code_blocks(phis, D, Y, 0.05, tol=1e-10)
    for j in range(N):
        single = lasso_solve(Y[j], phis[j] @ D, 0.05, tol=1e-10)
        assert np.allclose(codes.alpha[j], single.alpha, atol=1e-12)
        assert codes.objective[j] == pytest.approx(single.objective, abs=1e-12)
    assert codes.converged.all()


def test_blocks_identity_and_zero_solution(rng):
    D = rng.standard_normal((5, 7))
    X = rng.standard_normal((4, 5))
    a = sparse_code_blocks(None, D, X, 0.1, tol=1e-10)
    b = sparse_code_blocks(np.broadcast_to(np.eye(5), (4, 5, 5)), D, X, 0.1, tol=1e-10)
    assert np.array_equal(a.alpha, b.alpha)
    big = np.max(np.abs(X @ D)) * 1.01
    assert np.all(sparse_code_blocks(None, D, X, big).alpha == 0)


def test_blocks_thread_invariance(rng):
    phis = rng.standard_normal((37, 8, 16))
    D = rng.standard_normal((16, 32))
    Y = rng.standard_normal((37, 8))
    a = sparse_code_blocks(phis, D, Y, 0.01, n_jobs=1)
    b = sparse_code_blocks(phis, D, Y, 0.01, n_jobs=4)
    assert a.alpha.tobytes() == b.alpha.tobytes()
    assert np.array_equal(a.iterations, b.iterations)


def test_blocks_shape_errors(rng):
    with pytest.raises(ValueError):
        sparse_code_blocks(rng.standard_normal((2, 3, 4)), rng.standard_normal((4, 5)),
                           rng.standard_normal((3, 3)), 0.1)
    with pytest.raises(ValueError):
        sparse_code_blocks(None, np.eye(3), np.ones((2, 3)), 0.1, alpha0=np.zeros((2, 2)))


@given(q=st.integers(1, 8), p=st.integers(1, 5), lam=st.floats(0.0, 2.0),
       seed=st.integers(0, 2**32 - 1))
def test_matches_oracle_property(q, p, lam, seed):
    r = np.random.default_rng(seed)
    A = r.standard_normal((q, p))
    x = r.standard_normal(q)
    got = lasso_solve(x, A, lam, tol=1e-10)
    best = lasso_oracle(x, A, lam)
    assert got.objective <= best.objective + 1e-8


@given(x=arrays(float, 3, elements=st.floats(-5, 5)), lam=st.floats(0.0, 3.0))
def test_orthonormal_design_is_soft_threshold(x, lam):
    Q = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))[0]
    res = lasso_solve(Q @ x, Q, lam, tol=1e-12)
    expected = np.sign(x) * np.maximum(np.abs(x) - lam, 0)
    assert np.allclose(res.alpha, expected, atol=1e-9)
