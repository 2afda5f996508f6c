"""Quadratic model of the dictionary-update misfit and its random-matrix checks.

With ``d = vec(D)`` (column-major) and fixed codes, the compressive misfit is

    g(d) = 0.5 d^T Q d + f^T d + c,
    Q = sum_j a_j a_j^T (x) Phi_j^T Phi_j,
    f = -vec(sum_j Phi_j^T y_j a_j^T),
    c = 0.5 sum_j y_j^T y_j + lam sum_j ||a_j||_1,

and the complete-data misfit has ``Phi_j = I``, so its Hessian is
``(sum_j a_j a_j^T) (x) I_n``. This module builds both, estimates extreme
eigenvalues, evaluates matrix Chernoff tail bounds, and runs the Monte Carlo
audits of unbiasedness, concentration and accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, cg, eigsh

from .measurement import BlockMeasurementSet, Scheme, block_key, generate_block_matrices
from .sparse import SparseCodeSet

EXPLICIT_LIMIT = 4096


class EigenEstimationError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateCovariance(ValueError):
    pass


def vec(D) -> np.ndarray:
    return np.asarray(D, dtype=float).ravel(order="F")


def unvec(d, n: int, p: int) -> np.ndarray:
    return np.asarray(d, dtype=float).reshape(n, p, order="F")


@dataclass
class QuadraticModel:
    """``g(d) = 0.5 d^T Q d + f^T d + c`` over ``d = vec(D)``, ``D`` of shape ``(n, p)``.

    ``Q`` is stored densely in explicit mode. ``gram`` is set for the
    complete-data model, whose Hessian is ``gram (x) I_n``.
    """

    n: int
    p: int
    f: np.ndarray
    c: float
    mode: str
    Q: np.ndarray | None = None
    gram: np.ndarray | None = None
    _apply: object = None

    @property
    def dim(self) -> int:
        return self.n * self.p

    def matvec(self, d) -> np.ndarray:
        d = np.asarray(d, dtype=float)
        if self.Q is not None:
            return self.Q @ d
        return self._apply(d)

    def operator(self) -> LinearOperator:
        return LinearOperator((self.dim, self.dim), matvec=self.matvec, dtype=float)

    def value(self, d) -> float:
        d = np.asarray(d, dtype=float)
        return 0.5 * float(d @ self.matvec(d)) + float(self.f @ d) + self.c

    def explicit(self) -> np.ndarray:
        if self.Q is not None:
            return self.Q
        if self.gram is not None:
            return np.kron(self.gram, np.eye(self.n))
        return np.column_stack([self.matvec(e) for e in np.eye(self.dim)])


def _check_explicit(n, p):
    if n * p > EXPLICIT_LIMIT:
        raise MemoryError(f"explicit Hessian of size {n * p} exceeds limit {EXPLICIT_LIMIT}; "
                          "use mode='matrix_free'")


def assemble_quadratic(mset: BlockMeasurementSet, codes: SparseCodeSet,
                       mode: str = "explicit") -> QuadraticModel:
    phis, y, alpha = mset.phis, mset.y, codes.alpha
    n, p = mset.n, alpha.shape[1]
    if alpha.shape[0] != mset.N:
        raise ValueError(f"{alpha.shape[0]} codes for {mset.N} blocks")
    F = np.einsum("jmn,jm,jp->np", phis, y, alpha)
    f = -vec(F)
    c = 0.5 * float(np.sum(y * y)) + codes.lam * codes.l1()
    ptp = np.einsum("jmi,jmk->jik", phis, phis)
    if mode == "explicit":
        _check_explicit(n, p)
        Q = np.einsum("ja,jb,jik->aibk", alpha, alpha, ptp).reshape(n * p, n * p)
        return QuadraticModel(n, p, f, c, mode, Q=Q)
    if mode != "matrix_free":
        raise ValueError(f"unknown mode {mode!r}")

    def apply(d):
        D = unvec(d, n, p)
        W = np.einsum("jik,jk->ji", ptp, np.einsum("np,jp->jn", D, alpha))
        return vec(np.einsum("jn,jp->np", W, alpha))

    return QuadraticModel(n, p, f, c, mode, _apply=apply)


def assemble_quadratic_complete(blocks, codes: SparseCodeSet,
                                mode: str = "structured") -> QuadraticModel:
    """Complete-data model ``(Qbar, fbar, cbar)`` from centered blocks ``(N, n)``."""
    X = np.asarray(getattr(blocks, "vectors", blocks), dtype=float)
    alpha = codes.alpha
    n, p = X.shape[1], alpha.shape[1]
    gram = alpha.T @ alpha
    f = -vec(X.T @ alpha)
    c = 0.5 * float(np.sum(X * X)) + codes.lam * codes.l1()
    if mode == "explicit":
        _check_explicit(n, p)
        return QuadraticModel(n, p, f, c, mode, Q=np.kron(gram, np.eye(n)), gram=gram)

    def apply(d):
        return vec(unvec(d, n, p) @ gram)

    return QuadraticModel(n, p, f, c, "structured", gram=gram, _apply=apply)


def min_max_eigenvalues(model: QuadraticModel, tol: float = 1e-6, maxiter: int | None = None):
    """``(lambda_min, lambda_max)`` of the Hessian.

    Dense and Kronecker-structured models are decomposed exactly. Matrix-free
    models use Lanczos (ARPACK) on ``Q`` for the top eigenvalue and on
    ``sigma*I - Q`` for the bottom one.
    """
    if model.gram is not None:
        w = np.linalg.eigvalsh(model.gram)
        return float(w[0]), float(w[-1])
    if model.Q is not None:
        w = np.linalg.eigvalsh(model.Q)
        return float(w[0]), float(w[-1])
    op = model.operator()
    v0 = np.ones(model.dim) / np.sqrt(model.dim)
    try:
        top = float(eigsh(op, k=1, which="LA", tol=tol, maxiter=maxiter, v0=v0,
                          return_eigenvectors=False)[0])
    except ArpackNoConvergence as err:
        raise EigenEstimationError("Lanczos did not converge for lambda_max",
                                   (None, err.eigenvalues)) from err
    sigma = top * (1.0 + 1e-3) if top > 0 else 1.0
    shifted = LinearOperator(op.shape, matvec=lambda v: sigma * v - op.matvec(v), dtype=float)
    try:
        far = float(eigsh(shifted, k=1, which="LA", tol=tol, maxiter=maxiter, v0=v0,
                          return_eigenvectors=False)[0])
    except ArpackNoConvergence as err:
        raise EigenEstimationError("Lanczos did not converge for lambda_min",
                                   (None, top)) from err
    return sigma - far, top


def solve_quadratic(model: QuadraticModel, rtol: float = 1e-10) -> np.ndarray:
    """Minimizer of ``g``: solves ``Q d = -f``.

    Kronecker-structured models use the ``p x p`` Gram system; otherwise
    conjugate gradients on the matrix-free operator, stopping at residual
    ``rtol * ||f||``.
    """
    if model.gram is not None:
        F = -unvec(model.f, model.n, model.p)
        return vec(np.linalg.solve(model.gram, F.T).T)
    d, info = cg(model.operator(), -model.f, rtol=rtol, atol=0.0, maxiter=50 * model.dim)
    if info != 0:
        raise EigenEstimationError(f"conjugate gradients stopped with info={info}", d)
    return d


@dataclass
class UniquenessParams:
    """Inputs to the Chernoff uniqueness bound.

    ``dim`` is the dimension of the Hessian the bound is applied to, ``mu0``
    the smallest eigenvalue of the coefficient second moment and ``R`` the
    largest eigenvalue of a single Kronecker term.
    """

    mu0: float
    R: float
    N: int
    dim: int
    delta: float = 1.0


def chernoff_uniqueness_bound(params: UniquenessParams) -> float:
    """Upper bound ``dim * exp(-N*mu0/R)`` on ``P{lambda_min(Q) <= 0}``, clamped to [0, 1]."""
    if params.mu0 <= 0:
        raise DegenerateCovariance("mu0 must be positive: a singular coefficient covariance "
                                   "makes even complete-data learning non-unique")
    if params.R <= 0:
        raise ValueError("R must be positive")
    return float(min(1.0, params.dim * np.exp(-params.N * params.mu0 / params.R)))


def chernoff_tail_bounds(mu_min, mu_max, R, dim, delta):
    """Matrix Chernoff tails ``(lower, upper)`` for a sum of PSD terms bounded by ``R``.

    lower: ``P{lambda_min(Y) <= (1-delta) mu_min} <= dim*(e^-delta/(1-delta)^(1-delta))^(mu_min/R)``
    upper: ``P{lambda_max(Y) >= (1+delta) mu_max} <= dim*(e^delta/(1+delta)^(1+delta))^(mu_max/R)``

    Both clamped to [0, 1]; ``delta`` must lie in [0, 1].
    """
    if R <= 0:
        raise ValueError("R must be positive")
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    if mu_min < 0 or mu_max < 0:
        raise ValueError("expectation eigenvalues must be nonnegative")
    from scipy.special import xlogy

    log_lower = -delta - xlogy(1.0 - delta, 1.0 - delta)
    log_upper = delta - xlogy(1.0 + delta, 1.0 + delta)
    lower = dim * np.exp(log_lower * mu_min / R)
    upper = dim * np.exp(log_upper * mu_max / R)
    return float(min(1.0, lower)), float(min(1.0, upper))


def estimate_uniqueness_params(mset: BlockMeasurementSet, codes: SparseCodeSet) -> UniquenessParams:
    """Plug-in ``mu0`` (empirical second moment) and measured ``R``."""
    alpha = codes.alpha
    N, p = alpha.shape
    mu0 = float(np.linalg.eigvalsh(alpha.T @ alpha / N)[0])
    spectral = np.array([np.linalg.norm(mset.phis[j], 2) ** 2 for j in range(mset.N)])
    R = float(np.max(np.sum(alpha * alpha, axis=1) * spectral))
    return UniquenessParams(mu0, R, N, mset.n * p)


def hessian_extremes(phis, alpha) -> tuple[float, float]:
    """Extreme eigenvalues of ``sum_j a_j a_j^T (x) Phi_j^T Phi_j`` (dense)."""
    ptp = np.einsum("jmi,jmk->jik", phis, phis)
    p, n = alpha.shape[1], phis.shape[2]
    Q = np.einsum("ja,jb,jik->aibk", alpha, alpha, ptp).reshape(n * p, n * p)
    w = np.linalg.eigvalsh(Q)
    return float(w[0]), float(w[-1])


def is_positive_definite(lmin, lmax, rtol=1e-10) -> bool:
    return lmin > rtol * max(lmax, 0.0)


def uniqueness_sweep(alpha, n: int, m: int, N_values, trials: int, seed: int,
                     scheme=Scheme.BIG):
    """Empirical ``P{lambda_min(Q) <= 0}`` against the Chernoff bound for each ``N``.

    ``alpha`` holds at least ``max(N_values)`` code vectors; the first ``N``
    are used. One row per ``N``.
    """
    alpha = np.asarray(alpha, dtype=float)
    rows = []
    for N in N_values:
        a = alpha[:N]
        mu0 = float(np.linalg.eigvalsh(a.T @ a / N)[0])
        energy = np.sum(a * a, axis=1)
        fails, lmins, Rs = 0, [], []
        for t in range(trials):
            phis = generate_block_matrices(scheme, _trial_seed(seed, N, t), N, m, n)
            lmin, lmax = hessian_extremes(phis, a)
            lmins.append(lmin / lmax if lmax > 0 else 0.0)
            fails += not is_positive_definite(lmin, lmax)
            spectral = np.linalg.norm(phis, ord=2, axis=(1, 2)) ** 2
            Rs.append(float(np.max(energy * spectral)))
        R = max(Rs)
        bound = chernoff_uniqueness_bound(UniquenessParams(mu0, R, N, n * a.shape[1])) \
            if mu0 > 0 else 1.0
        rows.append({"N": N, "trials": trials, "failures": fails, "failure_rate": fails / trials,
                     "bound": bound, "mu0": mu0, "R": R,
                     "median_rel_lambda_min": float(np.median(lmins))})
    return rows


def _trial_seed(seed, N, t):
    # distinct 64-bit master seed per (N, trial)
    ss = np.random.SeedSequence([seed & ((1 << 64) - 1), N, t])
    return int(ss.generate_state(1, np.uint64)[0])


def chernoff_tail_experiment(dim: int, terms: int, trials: int, deltas, seed: int = 0):
    """Sum of ``terms`` random rank-one projectors ``v v^T`` (``v`` uniform on the sphere).

    Each term has ``lambda_max = 1 = R`` and the sum has mean ``terms/dim * I``.
    Returns one row per ``delta`` with empirical tail frequencies and bounds.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    lo = np.empty(trials)
    hi = np.empty(trials)
    for t in range(trials):
        V = rng.standard_normal((terms, dim))
        V /= np.linalg.norm(V, axis=1, keepdims=True)
        w = np.linalg.eigvalsh(V.T @ V)
        lo[t], hi[t] = w[0], w[-1]
    mu = terms / dim
    rows = []
    for delta in deltas:
        lower, upper = chernoff_tail_bounds(mu, mu, 1.0, dim, delta)
        rows.append({"delta": delta, "mu": mu,
                     "empirical_lower": float(np.mean(lo <= (1 - delta) * mu)), "bound_lower": lower,
                     "empirical_upper": float(np.mean(hi >= (1 + delta) * mu)), "bound_upper": upper})
    return rows


@dataclass
class UnbiasednessReport:
    mean_g: float
    gbar: float
    rel_gap: float
    std_err: float
    trials: int

    def within(self, k: float = 3.0) -> bool:
        """``|mean g - gbar| <= k`` standard errors (exact equality always passes)."""
        return abs(self.mean_g - self.gbar) <= k * self.std_err


def _residuals(blocks, D, alpha):
    return np.asarray(blocks, dtype=float) - alpha @ np.asarray(D, dtype=float).T


def sample_g(blocks, codes: SparseCodeSet, D_probe, m: int, trials: int, seed: int,
             chunk: int = 256) -> np.ndarray:
    """``g(vec(D_probe))`` under ``trials`` fresh raw BIG draws, ``y_j = Phi_j x_j``."""
    X = np.asarray(getattr(blocks, "vectors", blocks), dtype=float)
    N, n = X.shape
    DA = codes.alpha @ np.asarray(D_probe, dtype=float).T
    penalty = codes.lam * codes.l1()
    out = np.empty(trials)
    for start in range(0, trials, chunk):
        stop = min(trials, start + chunk)
        rng = np.random.Generator(np.random.Philox(key=block_key(seed, start)))
        phis = rng.standard_normal((stop - start, N, m, n)) / np.sqrt(m)
        y = np.einsum("tjmn,jn->tjm", phis, X)
        r = y - np.einsum("tjmn,jn->tjm", phis, DA)
        out[start:stop] = 0.5 * np.einsum("tjm,tjm->t", r, r) + penalty
    return out


def unbiasedness_test(blocks, codes: SparseCodeSet, D_probe, m: int, trials: int = 10_000,
                      seed: int = 0) -> UnbiasednessReport:
    """Compare the Monte Carlo mean of ``g`` with the complete-data value ``gbar``."""
    if trials < 100:
        raise ValueError("need at least 100 trials")
    X = np.asarray(getattr(blocks, "vectors", blocks), dtype=float)
    g = sample_g(X, codes, D_probe, m, trials, seed)
    R = _residuals(X, D_probe, codes.alpha)
    gbar = 0.5 * float(np.sum(R * R)) + codes.lam * codes.l1()
    mean_g = float(np.mean(g))
    std_err = float(np.std(g, ddof=1) / np.sqrt(trials))
    rel_gap = (mean_g - gbar) / gbar if gbar != 0 else 0.0
    return UnbiasednessReport(mean_g, gbar, rel_gap, std_err, trials)


def concentration_gamma(blocks, D, codes: SparseCodeSet) -> float:
    """Total residual energy over the largest per-block residual energy, in ``[1, N]``."""
    R = _residuals(getattr(blocks, "vectors", blocks), D, codes.alpha)
    energy = np.sum(R * R, axis=1)
    top = float(energy.max())
    if top == 0.0:
        raise ValueError("all residuals are zero; gamma is undefined")
    return float(energy.sum()) / top


def concentration_deviations(blocks, D, codes: SparseCodeSet, m: int, trials: int,
                             seed: int = 0) -> np.ndarray:
    """Relative deviation ``|sum ||Phi_j r_j||^2 - sum ||r_j||^2| / sum ||r_j||^2`` per BIG draw."""
    R = _residuals(getattr(blocks, "vectors", blocks), D, codes.alpha)
    N, n = R.shape
    total = float(np.sum(R * R))
    out = np.empty(trials)
    for start in range(0, trials, 256):
        stop = min(trials, start + 256)
        rng = np.random.Generator(np.random.Philox(key=block_key(seed, start)))
        phis = rng.standard_normal((stop - start, N, m, n)) / np.sqrt(m)
        PR = np.einsum("tjmn,jn->tjm", phis, R)
        out[start:stop] = np.abs(np.einsum("tjm,tjm->t", PR, PR) - total) / total
    return out


def concentration_bound(eps, C, m, gamma) -> np.ndarray:
    return np.minimum(1.0, 2.0 * np.exp(-C * np.asarray(eps) * m * m * gamma))


def fit_concentration_constant(deviations, eps_grid, m, gamma) -> float:
    """Largest ``C`` with empirical ``P{dev > eps} <= 2 exp(-C eps m^2 gamma)`` on the grid.

    The constant is not given in closed form; it is calibrated from a pilot
    sample and then held fixed.
    """
    deviations = np.asarray(deviations)
    best = np.inf
    for eps in eps_grid:
        freq = float(np.mean(deviations > eps))
        if freq == 0.0:
            continue
        if freq >= 2.0:
            return 0.0
        best = min(best, -np.log(freq / 2.0) / (eps * m * m * gamma))
    return float(best)


def dictionary_deviation(D_hat, D_star) -> float:
    """Squared Frobenius distance."""
    D_hat = np.asarray(D_hat, dtype=float)
    D_star = np.asarray(D_star, dtype=float)
    if D_hat.shape != D_star.shape:
        raise ValueError(f"shape mismatch {D_hat.shape} vs {D_star.shape}")
    diff = D_hat - D_star
    return float(np.sum(diff * diff))


def post_projection_deviation(d_hat, d_star, c: float) -> float:
    """Distance after projecting both onto the sphere of radius ``c``.

    Raises if it exceeds ``c * max(1/||d_hat||, 1/||d_star||) * ||d_hat - d_star||``.
    """
    d_hat = np.asarray(d_hat, dtype=float).ravel()
    d_star = np.asarray(d_star, dtype=float).ravel()
    a, b = np.linalg.norm(d_hat), np.linalg.norm(d_star)
    if a == 0 or b == 0:
        raise ValueError("cannot project a zero vector")
    dist = float(np.linalg.norm(c * d_hat / a - c * d_star / b))
    bound = c * max(1 / a, 1 / b) * float(np.linalg.norm(d_hat - d_star))
    if dist > bound * (1 + 1e-12) + 1e-300:
        raise ArithmeticError(f"projected distance {dist} exceeds bound {bound}")
    return dist


@dataclass
class AccuracyReport:
    N: int
    trial: int
    deviation: float
    mu1: float
    gbar_at_dstar: float
    epsilon_hat: float
    gamma: float
    bound: float
    ill_posed: bool = False
    dstar_norm2: float = 0.0

    @property
    def bound_holds(self) -> bool:
        # absolute slack at the exact-reduction tolerance, for roundoff in the solves
        return self.ill_posed or self.deviation <= self.bound + 1e-16 * self.dstar_norm2


def _identity_stack(N, n):
    return np.broadcast_to(np.eye(n), (N, n, n))


def accuracy_trial(X, codes: SparseCodeSet, phis, trial: int = 0) -> AccuracyReport:
    """One draw: minimize the compressive and complete-data quadratics and compare."""
    from .measurement import measure_blocks

    N, n = X.shape
    p = codes.p
    mset = measure_blocks(X, phis)
    model = assemble_quadratic(mset, codes, mode="matrix_free")
    complete = assemble_quadratic_complete(X, codes)
    g_lo, g_hi = min_max_eigenvalues(complete)
    if not is_positive_definite(g_lo, g_hi):
        # complete-data minimizer not unique; nothing to compare against
        return AccuracyReport(N, trial, np.nan, np.nan, np.nan, np.nan, np.nan, np.nan, True)
    d_star = solve_quadratic(complete)
    gbar_star = complete.value(d_star)
    gamma = concentration_gamma(X, unvec(d_star, n, p), codes)
    mu1, lmax = min_max_eigenvalues(model if n * p > EXPLICIT_LIMIT
                                    else assemble_quadratic(mset, codes, mode="explicit"))
    scale = float(d_star @ d_star)
    if not is_positive_definite(mu1, lmax):
        return AccuracyReport(N, trial, np.nan, mu1, gbar_star, np.nan, gamma, np.nan, True,
                              scale)
    d_hat = solve_quadratic(model)
    eps_star = abs(model.value(d_star) - gbar_star) / gbar_star
    gbar_hat = complete.value(d_hat)
    eps_hat = abs(model.value(d_hat) - gbar_hat) / gbar_hat
    eps = max(eps_star, eps_hat)
    deviation = float(np.sum((d_hat - d_star) ** 2))
    return AccuracyReport(N, trial, deviation, mu1, gbar_star, eps, gamma,
                          2.0 * eps / mu1 * gbar_star, False, scale)


def accuracy_experiment(blocks, codes: SparseCodeSet, m: int, N_values, trials: int,
                        seed: int = 0, scheme="big"):
    """Deviation between compressive and complete-data minimizers over an ``N`` sweep.

    Uses the first ``N`` blocks and codes for each ``N``. ``scheme`` is a
    sensing scheme name or ``"identity"`` (control: deviation must vanish).
    Returns the per-trial reports.
    """
    X = np.asarray(getattr(blocks, "vectors", blocks), dtype=float)
    n = X.shape[1]
    reports = []
    for N in N_values:
        sub = SparseCodeSet(codes.alpha[:N], codes.lam)
        for t in range(trials):
            if scheme == "identity":
                phis = _identity_stack(N, n)
            else:
                s = Scheme.parse(scheme) if isinstance(scheme, str) else Scheme(scheme)
                phis = generate_block_matrices(s, _trial_seed(seed, N, t), N, m, n)
            reports.append(accuracy_trial(X[:N], sub, phis, t))
    return reports


def summarize_accuracy(reports):
    """Mean deviation and bound per ``N`` (ill-posed trials excluded)."""
    rows = []
    for N in sorted({r.N for r in reports}):
        group = [r for r in reports if r.N == N]
        ok = [r for r in group if not r.ill_posed]
        rows.append({
            "N": N,
            "trials": len(group),
            "ill_posed": len(group) - len(ok),
            "mean_deviation": float(np.mean([r.deviation for r in ok])) if ok else np.nan,
            "mean_bound": float(np.mean([r.bound for r in ok])) if ok else np.nan,
            "mean_mu1": float(np.mean([r.mu1 for r in ok])) if ok else np.nan,
            "mean_epsilon": float(np.mean([r.epsilon_hat for r in ok])) if ok else np.nan,
            "mean_gamma": float(np.mean([r.gamma for r in ok])) if ok else np.nan,
            "bound_violations": sum(not r.bound_holds for r in group),
        })
    return rows


def synthetic_problem(n: int, p: int, N: int, seed: int = 0, sparsity: int | None = None,
                      noise: float = 0.1, lam: float = 0.0):
    """Random ``(blocks, D, codes)`` with ``sparsity`` nonzeros per code.

    Blocks are ``D a_j`` plus Gaussian noise, so the complete-data misfit at
    the generating dictionary is nonzero. Supports are drawn uniformly, which
    makes the coefficient second moment full rank once ``N`` is moderate.
    """
    from .dictionary import normalize_frobenius

    k = max(1, p // 2) if sparsity is None else sparsity
    if not 1 <= k <= p:
        raise ValueError("sparsity must lie in [1, p]")
    rng = np.random.Generator(np.random.Philox(key=seed))
    D = normalize_frobenius(rng.standard_normal((n, p)))
    alpha = np.zeros((N, p))
    for j in range(N):
        support = rng.choice(p, k, replace=False)
        alpha[j, support] = rng.standard_normal(k)
    X = alpha @ D.T + noise * rng.standard_normal((N, n))
    return X, D, SparseCodeSet(alpha, lam)
