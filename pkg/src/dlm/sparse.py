"""Lasso regression ``min_a 0.5*||x - D a||^2 + lam*||a||_1``.

The solver is cyclic coordinate descent with soft-thresholding. It stops when
the largest coordinate-wise KKT violation drops to ``tol``. Batches of
block problems (one design ``Phi_j @ D`` per block) are solved by a
GIL-free numba kernel, optionally split over a thread pool. Each block is
independent, so results do not depend on the thread count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba
import numpy as np

DEFAULT_TOL = 1e-7
DEFAULT_MAX_ITER = 10_000


@dataclass
class SparseCode:
    alpha: np.ndarray
    objective: float
    iterations_used: int
    converged: bool


@dataclass
class SparseCodeSet:
    """Per-block codes ``alpha`` of shape ``(N, p)`` and the lambda that produced them."""

    alpha: np.ndarray
    lam: float
    objective: np.ndarray | None = None
    iterations: np.ndarray | None = None
    converged: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.alpha.shape[0]

    @property
    def p(self) -> int:
        return self.alpha.shape[1]

    def l1(self) -> float:
        return float(np.abs(self.alpha).sum())


class LassoError(ValueError):
    pass


@numba.njit(cache=True, nogil=True)
def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


@numba.njit(cache=True, nogil=True)
def _kkt_violation(A, r, alpha, lam):
    q, p = A.shape
    worst = 0.0
    for k in range(p):
        g = 0.0
        for i in range(q):
            g += A[i, k] * r[i]
        a = alpha[k]
        if a > 0.0:
            v = abs(g - lam)
        elif a < 0.0:
            v = abs(g + lam)
        else:
            v = abs(g) - lam
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True, nogil=True)
def _residual(A, y, alpha, r):
    q, p = A.shape
    for i in range(q):
        s = y[i]
        for k in range(p):
            s -= A[i, k] * alpha[k]
        r[i] = s


@numba.njit(cache=True, nogil=True)
def _cholesky_solve(M, b):
    """Solve ``M x = b`` for small SPD ``M``; returns (x, ok)."""
    k = M.shape[0]
    L = np.zeros((k, k))
    scale = 0.0
    for i in range(k):
        scale = max(scale, M[i, i])
    for i in range(k):
        for j in range(i + 1):
            s = M[i, j]
            for l in range(j):
                s -= L[i, l] * L[j, l]
            if i == j:
                if s <= 1e-12 * scale:
                    return b, False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    z = np.empty(k)
    for i in range(k):
        s = b[i]
        for l in range(i):
            s -= L[i, l] * z[l]
        z[i] = s / L[i, i]
    x = np.empty(k)
    for i in range(k - 1, -1, -1):
        s = z[i]
        for l in range(i + 1, k):
            s -= L[l, i] * x[l]
        x[i] = s / L[i, i]
    return x, True


@numba.njit(cache=True, nogil=True)
def _lu_solve(M, b):
    """Gaussian elimination with partial pivoting; returns (x, ok)."""
    k = M.shape[0]
    M = M.copy()
    x = b.copy()
    scale = 0.0
    for i in range(k):
        for j in range(k):
            scale = max(scale, abs(M[i, j]))
    for c in range(k):
        piv = c
        for i in range(c + 1, k):
            if abs(M[i, c]) > abs(M[piv, c]):
                piv = i
        if abs(M[piv, c]) <= 1e-12 * scale:
            return x, False
        if piv != c:
            for j in range(k):
                M[c, j], M[piv, j] = M[piv, j], M[c, j]
            x[c], x[piv] = x[piv], x[c]
        for i in range(c + 1, k):
            f = M[i, c] / M[c, c]
            if f != 0.0:
                for j in range(c, k):
                    M[i, j] -= f * M[c, j]
                x[i] -= f * x[c]
    for i in range(k - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, k):
            s -= M[i, j] * x[j]
        x[i] = s / M[i, i]
    return x, True


@numba.njit(cache=True, nogil=True)
def _null_direction(A, idx):
    """A vector ``v`` over the active set with ``A[:, idx] @ v ~= 0``."""
    q = A.shape[0]
    k = idx.shape[0]
    r = min(k - 1, q)
    # express one active column through r others
    M = np.empty((r, r))
    rhs = np.empty(r)
    ok = False
    z = rhs
    if r == q:
        for i in range(q):
            for a in range(r):
                M[i, a] = A[i, idx[a]]
            rhs[i] = A[i, idx[r]]
        z, ok = _lu_solve(M, rhs)
    v = np.zeros(k)
    if ok:
        for a in range(r):
            v[a] = z[a]
        v[r] = -1.0
        return v, True
    As = np.empty((q, k))
    for a in range(k):
        for i in range(q):
            As[i, a] = A[i, idx[a]]
    _, sv, vt = np.linalg.svd(As)
    smallest = sv[k - 1] if k <= q else 0.0
    if smallest > 1e-10 * sv[0]:
        return v, False
    return vt[k - 1].copy(), True


@numba.njit(cache=True, nogil=True)
def _null_step(A, lam, alpha, idx, out):
    """Slide along a null direction of the active columns to the first zero.

    The fit is unchanged and the l1 term does not grow, so the support
    shrinks at no cost. Used when the active columns are linearly dependent.
    """
    k = idx.shape[0]
    v, ok = _null_direction(A, idx)
    if not ok:
        return False
    slope = 0.0
    for a in range(k):
        slope += v[a] * (1.0 if alpha[idx[a]] > 0.0 else -1.0)
    if slope > 0.0:
        for a in range(k):
            v[a] = -v[a]
    t = np.inf
    hit = -1
    for a in range(k):
        cur = alpha[idx[a]]
        if v[a] * cur < 0.0:
            ta = -cur / v[a]
            if ta < t:
                t = ta
                hit = a
    if hit < 0:
        return False
    for j in range(out.shape[0]):
        out[j] = alpha[j]
    for a in range(k):
        out[idx[a]] = alpha[idx[a]] + t * v[a]
    out[idx[hit]] = 0.0
    return True


@numba.njit(cache=True, nogil=True)
def _face_step(A, y, lam, alpha, out):
    """Move toward the exact minimizer over the support/sign face of ``alpha``.

    Writes the new point to ``out``. If the face minimizer keeps every sign it
    is taken whole; otherwise the step stops at the first coordinate that
    reaches zero, which is set to exactly zero. Either way the objective does
    not increase. Returns False when no step is possible.
    """
    q, p = A.shape
    k = 0
    for j in range(p):
        if alpha[j] != 0.0:
            k += 1
    if k == 0:
        return False
    idx = np.empty(k, dtype=np.int64)
    k = 0
    for j in range(p):
        if alpha[j] != 0.0:
            idx[k] = j
            k += 1
    if k > q:
        return _null_step(A, lam, alpha, idx, out)
    M = np.empty((k, k))
    b = np.empty(k)
    for a in range(k):
        ca = idx[a]
        s = 0.0
        for i in range(q):
            s += A[i, ca] * y[i]
        b[a] = s - lam * (1.0 if alpha[ca] > 0.0 else -1.0)
        for c in range(a + 1):
            cc = idx[c]
            s = 0.0
            for i in range(q):
                s += A[i, ca] * A[i, cc]
            M[a, c] = s
            M[c, a] = s
    x, ok = _cholesky_solve(M, b)
    if not ok:
        return _null_step(A, lam, alpha, idx, out)
    t = 1.0
    hit = -1
    for a in range(k):
        cur = alpha[idx[a]]
        if x[a] * cur <= 0.0:
            ta = cur / (cur - x[a])
            if ta < t:
                t = ta
                hit = a
    for j in range(p):
        out[j] = alpha[j]
    for a in range(k):
        cur = alpha[idx[a]]
        out[idx[a]] = cur + t * (x[a] - cur)
    if hit >= 0:
        out[idx[hit]] = 0.0
    return True


@numba.njit(cache=True, nogil=True)
def _objective(A, y, lam, alpha, r):
    _residual(A, y, alpha, r)
    s = 0.0
    for i in range(r.shape[0]):
        s += r[i] * r[i]
    l1 = 0.0
    for k in range(alpha.shape[0]):
        l1 += abs(alpha[k])
    return 0.5 * s + lam * l1


@numba.njit(cache=True, nogil=True)
def _cd_solve(A, y, lam, alpha, tol, max_iter):
    """Coordinate descent in place on ``alpha``; returns (sweeps, converged).

    Each sweep is followed by a face step (see ``_face_step``), kept only if
    it does not raise the objective.
    """
    q, p = A.shape
    col_sq = np.zeros(p)
    for k in range(p):
        s = 0.0
        for i in range(q):
            s += A[i, k] * A[i, k]
        col_sq[k] = s
        if s == 0.0:
            alpha[k] = 0.0
    r = np.empty(q)
    trial = np.empty(p)
    r_trial = np.empty(q)
    _residual(A, y, alpha, r)
    if _kkt_violation(A, r, alpha, lam) <= tol:
        return 0, True
    for sweep in range(max_iter):
        for k in range(p):
            ck = col_sq[k]
            if ck == 0.0:
                continue
            ak = alpha[k]
            rho = ck * ak
            for i in range(q):
                rho += A[i, k] * r[i]
            new = _soft(rho, lam) / ck
            if new != ak:
                delta = new - ak
                for i in range(q):
                    r[i] -= A[i, k] * delta
                alpha[k] = new
        if _face_step(A, y, lam, alpha, trial):
            if _objective(A, y, lam, trial, r_trial) <= _objective(A, y, lam, alpha, r):
                for k in range(p):
                    alpha[k] = trial[k]
        _residual(A, y, alpha, r)
        if _kkt_violation(A, r, alpha, lam) <= tol:
            return sweep + 1, True
    return max_iter, False


@numba.njit(cache=True, nogil=True)
def _code_blocks(phis, D, Y, lam, alpha, tol, max_iter, start, stop, iters, conv, objs):
    m = phis.shape[1]
    n = phis.shape[2]
    p = D.shape[1]
    A = np.empty((m, p))
    r = np.empty(m)
    for j in range(start, stop):
        phi = phis[j]
        for i in range(m):
            for k in range(p):
                s = 0.0
                for l in range(n):
                    s += phi[i, l] * D[l, k]
                A[i, k] = s
        a = alpha[j]
        it, ok = _cd_solve(A, Y[j], lam, a, tol, max_iter)
        iters[j] = it
        conv[j] = ok
        _residual(A, Y[j], a, r)
        obj = 0.0
        for i in range(m):
            obj += r[i] * r[i]
        l1 = 0.0
        for k in range(p):
            l1 += abs(a[k])
        objs[j] = 0.5 * obj + lam * l1


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise LassoError("non-finite input to lasso solver")


def lasso_objective(target, design, lam, alpha) -> float:
    target = np.asarray(target, dtype=float)
    design = np.atleast_2d(np.asarray(design, dtype=float))
    alpha = np.asarray(alpha, dtype=float)
    if design.shape != (target.shape[0], alpha.shape[0]):
        raise ValueError(f"design {design.shape} incompatible with target {target.shape} "
                         f"and alpha {alpha.shape}")
    r = target - design @ alpha
    return 0.5 * float(r @ r) + lam * float(np.abs(alpha).sum())


def lasso_solve(target, design, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                alpha0=None, callback=None) -> SparseCode:
    """Solve one Lasso problem.

    Parameters
    ----------
    target : (q,) array
    design : (q, p) array
    lam : float
        Penalty weight, ``>= 0``. With ``lam == 0`` and ``p > q`` the problem
        has no unique minimizer; the iterate reached from ``alpha0`` is returned.
    tol : float
        Bound on the max coordinate-wise KKT violation at exit.
    alpha0 : (p,) array, optional
        Warm start.
    callback : callable, optional
        Called as ``callback(alpha, objective)`` after every sweep.
    """
    target = np.ascontiguousarray(target, dtype=float)
    design = np.ascontiguousarray(np.atleast_2d(design), dtype=float)
    if design.shape[0] != target.shape[0] or design.shape[1] < 1:
        raise ValueError(f"design {design.shape} incompatible with target {target.shape}")
    if lam < 0:
        raise LassoError("lambda must be nonnegative")
    if tol <= 0:
        raise LassoError("tol must be positive")
    _check_finite(target, design, [lam])
    p = design.shape[1]
    alpha = np.zeros(p) if alpha0 is None else np.array(alpha0, dtype=float)
    if callback is None:
        sweeps, ok = _cd_solve(design, target, float(lam), alpha, float(tol), int(max_iter))
    else:
        sweeps, ok = 0, False
        while sweeps < max_iter:
            used, ok = _cd_solve(design, target, float(lam), alpha, float(tol), 1)
            if ok and used == 0:
                break
            sweeps += used
            callback(alpha.copy(), lasso_objective(target, design, lam, alpha))
            if ok:
                break
    obj = lasso_objective(target, design, lam, alpha)
    return SparseCode(alpha, obj, int(sweeps), bool(ok))


def sparse_code_blocks(phis, D, Y, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER,
                       alpha0=None, n_jobs=1) -> SparseCodeSet:
    """Solve ``alpha_j = argmin 0.5*||y_j - Phi_j D a||^2 + lam*||a||_1`` for all j.

    ``phis`` may be ``None`` (identity sensing, complete data).
    """
    D = np.ascontiguousarray(D, dtype=float)
    Y = np.ascontiguousarray(Y, dtype=float)
    N = Y.shape[0]
    if phis is None:
        phis = np.broadcast_to(np.eye(D.shape[0]), (N, D.shape[0], D.shape[0]))
    if phis.shape[0] != N or phis.shape[1] != Y.shape[1] or phis.shape[2] != D.shape[0]:
        raise ValueError(f"matrices {phis.shape}, dictionary {D.shape} and measurements "
                         f"{Y.shape} disagree")
    if lam < 0:
        raise LassoError("lambda must be nonnegative")
    _check_finite(D, Y)
    p = D.shape[1]
    alpha = np.zeros((N, p)) if alpha0 is None else np.array(alpha0, dtype=float, copy=True)
    if alpha.shape != (N, p):
        raise ValueError(f"warm start has shape {alpha.shape}, expected {(N, p)}")
    iters = np.zeros(N, dtype=np.int64)
    conv = np.zeros(N, dtype=np.bool_)
    objs = np.zeros(N)
    args = (phis, D, Y, float(lam), alpha, float(tol), int(max_iter))
    if n_jobs is None or n_jobs <= 1 or N < 2:
        _code_blocks(*args, 0, N, iters, conv, objs)
    else:
        bounds = np.linspace(0, N, min(n_jobs, N) + 1).astype(int)
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            futures = [pool.submit(_code_blocks, *args, int(a), int(b), iters, conv, objs)
                       for a, b in zip(bounds[:-1], bounds[1:])]
            for f in futures:
                f.result()
    return SparseCodeSet(alpha, float(lam), objs, iters, conv)


def lasso_oracle(target, design, lam, max_p=12) -> SparseCode:
    """Global Lasso minimum by enumerating supports and sign patterns.

    For each support ``S`` and signs ``s`` the stationarity condition
    ``A_S^T A_S a_S = A_S^T x - lam*s`` is solved (least squares when
    singular); the best objective over all candidates and ``a = 0`` is exact.
    Only meant for tests, ``p <= max_p``.
    """
    target = np.asarray(target, dtype=float)
    design = np.atleast_2d(np.asarray(design, dtype=float))
    q, p = design.shape
    if p > max_p:
        raise LassoError(f"oracle enumeration limited to p <= {max_p}, got {p}")
    best = np.zeros(p)
    best_obj = lasso_objective(target, design, lam, best)
    for size in range(1, p + 1):
        for support in itertools.combinations(range(p), size):
            A = design[:, support]
            gram = A.T @ A
            rhs0 = A.T @ target
            for signs in itertools.product((-1.0, 1.0), repeat=size):
                rhs = rhs0 - lam * np.asarray(signs)
                sol = np.linalg.lstsq(gram, rhs, rcond=None)[0]
                cand = np.zeros(p)
                cand[list(support)] = sol
                obj = lasso_objective(target, design, lam, cand)
                if obj < best_obj:
                    best, best_obj = cand, obj
    return SparseCode(best, best_obj, 0, True)
