import numpy as np
import pytest
from hypothesis import given, strategies as st

from dlm.analysis import (DegenerateCovariance, EXPLICIT_LIMIT, UniquenessParams,
                          accuracy_experiment, assemble_quadratic, assemble_quadratic_complete,
                          chernoff_tail_bounds, chernoff_tail_experiment,
                          chernoff_uniqueness_bound, concentration_bound,
                          concentration_deviations, concentration_gamma, dictionary_deviation,
                          estimate_uniqueness_params, fit_concentration_constant,
                          hessian_extremes, min_max_eigenvalues, post_projection_deviation,
                          sample_g, solve_quadratic, summarize_accuracy, synthetic_problem,
                          unbiasedness_test, uniqueness_sweep, unvec, vec)
from dlm.learn import misfit_objective
from dlm.measurement import Scheme, generate_block_matrices, measure_blocks, measure_image
from dlm.sparse import SparseCodeSet


def instance(seed=0, N=10, n=4, p=5, m=3, scheme="big", lam=0.1):
    X, D, codes = synthetic_problem(n, p, N, seed, lam=lam)
    mset = measure_image(X, m, scheme, seed=seed)
    return X, D, codes, mset


def test_vec_is_column_major():
    D = np.arange(6.0).reshape(2, 3)
    assert list(vec(D)) == [0, 3, 1, 4, 2, 5]
    assert np.array_equal(unvec(vec(D), 2, 3), D)


def test_single_basis_code_block_structure():
    r = np.random.default_rng(0)
    phi = r.standard_normal((2, 3))
    mset = measure_blocks(r.standard_normal((1, 3)), phi[None])
    model = assemble_quadratic(mset, SparseCodeSet(np.array([[1.0, 0.0]]), 0.0))
    Q = model.Q
    assert np.allclose(Q[:3, :3], phi.T @ phi)
    assert np.all(Q[3:, :] == 0) and np.all(Q[:, 3:] == 0)


def test_explicit_and_matrix_free_agree():
    _, _, codes, mset = instance(1)
    a = assemble_quadratic(mset, codes, "explicit")
    b = assemble_quadratic(mset, codes, "matrix_free")
    r = np.random.default_rng(1)
    for _ in range(20):
        d = r.standard_normal(a.dim)
        assert np.allclose(a.matvec(d), b.matvec(d), atol=1e-10, rtol=0)
    assert np.allclose(a.Q, a.Q.T, atol=1e-10)
    assert np.linalg.eigvalsh(a.Q)[0] >= -1e-8 * np.linalg.eigvalsh(a.Q)[-1]


def test_model_value_equals_direct_misfit():
    _, _, codes, mset = instance(2)
    model = assemble_quadratic(mset, codes)
    r = np.random.default_rng(2)
    for _ in range(10):
        D = r.standard_normal((mset.n, codes.p))
        assert model.value(vec(D)) == pytest.approx(misfit_objective(mset, D, codes), rel=1e-8)


def test_complete_model_value_and_spectrum():
    X, _, codes, _ = instance(3)
    model = assemble_quadratic_complete(X, codes)
    dense = assemble_quadratic_complete(X, codes, mode="explicit")
    D = np.random.default_rng(3).standard_normal((4, 5))
    direct = 0.5 * np.sum((X - codes.alpha @ D.T) ** 2) + codes.lam * codes.l1()
    assert model.value(vec(D)) == pytest.approx(direct, rel=1e-10)
    lo, hi = min_max_eigenvalues(model)
    w = np.linalg.eigvalsh(dense.Q)
    assert lo == pytest.approx(w[0], abs=1e-8) and hi == pytest.approx(w[-1], rel=1e-8)
    assert lo == pytest.approx(np.linalg.eigvalsh(codes.alpha.T @ codes.alpha)[0], abs=1e-10)


def test_complete_rank_deficient_with_few_blocks():
    X, _, codes = synthetic_problem(4, 6, 3, seed=4)
    lo, hi = min_max_eigenvalues(assemble_quadratic_complete(X, codes))
    assert abs(lo) < 1e-10 * hi


def test_monte_carlo_mean_of_q_is_complete_hessian():
    X, _, codes = synthetic_problem(3, 4, 6, seed=5)
    draws = 4000
    acc = np.zeros((12, 12))
    acc2 = np.zeros((12, 12))
    for t in range(draws):
        mset = measure_image(X, 2, "big", seed=1000 + t)
        Q = assemble_quadratic(mset, codes).Q
        acc += Q
        acc2 += Q * Q
    mean = acc / draws
    se = np.sqrt(np.maximum(acc2 / draws - mean ** 2, 0) / draws)
    Qbar = assemble_quadratic_complete(X, codes, "explicit").Q
    assert np.all(np.abs(mean - Qbar) <= 4 * se + 1e-12)


def test_identity_hessian_eigenvalues():
    model = assemble_quadratic(measure_blocks(np.zeros((1, 2)), np.eye(2)[None]),
                               SparseCodeSet(np.array([[1.0]]), 0.0), "matrix_free")
    lo, hi = min_max_eigenvalues(model)
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)


def test_lanczos_matches_dense():
    _, _, codes, mset = instance(6, N=20, n=5, p=8, m=3)
    dense = assemble_quadratic(mset, codes)
    free = assemble_quadratic(mset, codes, "matrix_free")
    w = np.linalg.eigvalsh(dense.Q)
    lo, hi = min_max_eigenvalues(free, tol=1e-12)
    assert lo == pytest.approx(w[0], abs=1e-8 * w[-1])
    assert hi == pytest.approx(w[-1], rel=1e-8)


def test_fixed_scheme_is_singular():
    _, _, codes, mset = instance(7, N=40, n=6, p=8, m=3, scheme="fixed")
    lo, hi = min_max_eigenvalues(assemble_quadratic(mset, codes))
    assert lo <= 1e-8 * hi
    s = np.linalg.svd(assemble_quadratic(mset, codes).Q, compute_uv=False)
    assert np.sum(s > 1e-8 * s[0]) <= 8 * 3


def test_explicit_size_guard():
    big = SparseCodeSet(np.zeros((1, EXPLICIT_LIMIT)), 0.0)
    mset = measure_blocks(np.zeros((1, 2)), np.eye(2)[None])
    with pytest.raises(MemoryError):
        assemble_quadratic(mset, big)
    with pytest.raises(ValueError):
        assemble_quadratic(mset, SparseCodeSet(np.zeros((1, 2)), 0.0), mode="sparse")


def test_solve_quadratic_paths_agree():
    X, _, codes, mset = instance(8, N=30)
    d1 = solve_quadratic(assemble_quadratic(mset, codes, "matrix_free"))
    dense = assemble_quadratic(mset, codes)
    d2 = np.linalg.solve(dense.Q, -dense.f)
    assert np.allclose(d1, d2, atol=1e-7)
    comp = assemble_quadratic_complete(X, codes)
    d3 = solve_quadratic(comp)
    assert np.allclose(d3, np.linalg.solve(np.kron(comp.gram, np.eye(4)), -comp.f))


def test_uniqueness_bound_values():
    assert chernoff_uniqueness_bound(UniquenessParams(1.0, 1.0, 0, 8)) == 1.0
    n = 8
    N = np.log(100 * n)
    assert chernoff_uniqueness_bound(UniquenessParams(1.0, 1.0, N, n)) == pytest.approx(0.01)
    with pytest.raises(DegenerateCovariance):
        chernoff_uniqueness_bound(UniquenessParams(0.0, 1.0, 10, 8))
    with pytest.raises(ValueError):
        chernoff_uniqueness_bound(UniquenessParams(1.0, 0.0, 10, 8))


def test_tail_bound_values():
    assert chernoff_tail_bounds(3.0, 3.0, 1.0, 5, 0.0) == (1.0, 1.0)
    lo, _ = chernoff_tail_bounds(20.0, 20.0, 1.0, 5, 1.0)
    assert lo == pytest.approx(5 * np.exp(-20.0))
    _, up = chernoff_tail_bounds(20.0, 20.0, 1.0, 5, 0.5)
    assert up == pytest.approx(5 * (np.exp(0.5) / 1.5 ** 1.5) ** 20)
    for bad in ((1, 1, 0, 2, 0.5), (1, 1, 1, 2, 1.5), (-1, 1, 1, 2, 0.5)):
        with pytest.raises(ValueError):
            chernoff_tail_bounds(*bad)


@given(mu=st.floats(0.0, 100.0), R=st.floats(0.1, 10.0), dim=st.integers(1, 100),
       delta=st.floats(0.0, 1.0))
def test_tail_bounds_in_unit_interval(mu, R, dim, delta):
    lo, up = chernoff_tail_bounds(mu, mu, R, dim, delta)
    assert 0.0 <= lo <= 1.0 and 0.0 <= up <= 1.0


def test_chernoff_tail_monte_carlo():
    rows = chernoff_tail_experiment(dim=4, terms=50, trials=10_000, deltas=(0.25, 0.5, 0.75, 0.9),
                                    seed=3)
    for r in rows:
        assert r["empirical_lower"] <= r["bound_lower"]
        assert r["empirical_upper"] <= r["bound_upper"]
    assert any(r["bound_lower"] < 1 for r in rows)


def test_uniqueness_sweep_below_bound():
    _, _, codes = synthetic_problem(4, 5, 256, seed=9)
    rows = uniqueness_sweep(codes.alpha, 4, 2, [16, 64, 256], 30, seed=1)
    for r in rows:
        assert r["failure_rate"] <= r["bound"]
    assert rows[-1]["failures"] == 0


def test_estimate_uniqueness_params():
    X, _, codes, mset = instance(10, N=50)
    params = estimate_uniqueness_params(mset, codes)
    assert params.mu0 > 0 and params.R > 0 and params.dim == 4 * 5 and params.N == 50
    assert hessian_extremes(mset.phis, codes.alpha)[1] <= params.N * params.R


def test_unbiasedness_examples():
    X, D, codes = synthetic_problem(4, 5, 8, seed=11, lam=0.2)
    zero_blocks = np.zeros_like(X)
    g = sample_g(zero_blocks, codes, np.zeros_like(D), 2, 200, seed=1)
    assert np.allclose(g, 0.2 * codes.l1())
    rep = unbiasedness_test(X, codes, D, 3, trials=10_000, seed=2)
    assert rep.within(3.0)
    assert abs(rep.rel_gap) < 3 * rep.std_err / rep.gbar
    with pytest.raises(ValueError):
        unbiasedness_test(X, codes, D, 3, trials=10)


def test_gamma_examples():
    codes = SparseCodeSet(np.zeros((3, 2)), 0.0)
    D = np.zeros((2, 2))
    assert concentration_gamma(np.array([[1.0, 0], [0, 1.0], [0.6, 0.8]]), D, codes) == 3.0
    assert concentration_gamma(np.array([[0.0, 0], [0, 2.0], [0, 0]]), D, codes) == 1.0
    with pytest.raises(ValueError):
        concentration_gamma(np.zeros((3, 2)), D, codes)
    X, D, codes = synthetic_problem(4, 5, 12, seed=12)
    R = X - codes.alpha @ D.T
    e = [sum(v * v for v in row) for row in R]
    assert concentration_gamma(X, D, codes) == pytest.approx(sum(e) / max(e), rel=1e-12)


def test_concentration_coverage_with_pinned_constant():
    X, D, codes = synthetic_problem(8, 10, 40, seed=13)
    m = 4
    gamma = concentration_gamma(X, D, codes)
    grid = np.linspace(0.05, 0.6, 12)
    pilot = concentration_deviations(X, D, codes, m, 1000, seed=100)
    C = fit_concentration_constant(pilot, grid, m, gamma)
    assert 0 < C < np.inf
    fresh = concentration_deviations(X, D, codes, m, 1000, seed=200)
    # slack for sampling noise between pilot and fresh draws
    for eps in grid:
        freq = np.mean(fresh > eps)
        bound = concentration_bound(eps, C, m, gamma)
        assert freq <= bound + 3 * np.sqrt(bound * (1 - bound) / 1000) + 2e-3


def test_dictionary_deviation():
    r = np.random.default_rng(0)
    D = r.standard_normal((3, 4))
    E = r.standard_normal((3, 4))
    E *= 0.1 / np.linalg.norm(E)
    assert dictionary_deviation(D, D) == 0
    assert dictionary_deviation(D + E, D) == pytest.approx(0.01)
    with pytest.raises(ValueError):
        dictionary_deviation(D, D[:, :3])


def test_post_projection():
    r = np.random.default_rng(1)
    d = r.standard_normal(6)
    assert post_projection_deviation(d, d, 2.0) == 0
    assert post_projection_deviation(2 * d, d, 2.0) == pytest.approx(0, abs=1e-14)
    for _ in range(1000):
        post_projection_deviation(r.standard_normal(6), r.standard_normal(6), r.uniform(0.1, 5))
    with pytest.raises(ValueError):
        post_projection_deviation(np.zeros(3), d[:3], 1.0)


def test_accuracy_identity_control():
    X, _, codes = synthetic_problem(4, 5, 64, seed=14)
    reports = accuracy_experiment(X, codes, 4, [16, 64], 2, scheme="identity")
    for r in reports:
        assert r.deviation < 1e-16 and r.bound_holds


def test_accuracy_reports_and_summary():
    X, _, codes = synthetic_problem(4, 6, 128, seed=15)
    reports = accuracy_experiment(X, codes, 2, [4, 128], 3, seed=1)
    small = [r for r in reports if r.N == 4]
    assert all(r.ill_posed for r in small)
    big = [r for r in reports if r.N == 128]
    assert all(not r.ill_posed and r.bound_holds for r in big)
    assert all(1 <= r.gamma <= r.N for r in big)
    rows = summarize_accuracy(reports)
    assert rows[0]["ill_posed"] == 3 and rows[1]["bound_violations"] == 0


def test_synthetic_problem_validation():
    with pytest.raises(ValueError):
        synthetic_problem(4, 5, 3, sparsity=6)
    X, D, codes = synthetic_problem(4, 5, 3, sparsity=2)
    assert np.all(np.count_nonzero(codes.alpha, axis=1) == 2)


def test_hessian_extremes_matches_model():
    _, _, codes, mset = instance(16)
    w = np.linalg.eigvalsh(assemble_quadratic(mset, codes).Q)
    lo, hi = hessian_extremes(mset.phis, codes.alpha)
    assert lo == pytest.approx(w[0], abs=1e-10) and hi == pytest.approx(w[-1])
    phis = generate_block_matrices(Scheme.FIXED_SHARED, 0, 10, 2, 4)
    lo, hi = hessian_extremes(phis, codes.alpha)
    assert lo <= 1e-8 * hi
