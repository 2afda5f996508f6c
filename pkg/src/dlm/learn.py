"""Dictionary learning from block-wise linear measurements (DL-M).

Each outer iteration codes every block against ``Phi_j D`` with a decaying
penalty, takes one steepest-descent step on the quadratic misfit with the
exact line-search step length, and projects back to ``||D||_F = sqrt(p)``.
Complete-data learning is the special case ``Phi_j = I``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .dictionary import normalize_frobenius
from .imaging import psnr, recover_image
from .measurement import BlockMeasurementSet, Scheme
from .sparse import DEFAULT_MAX_ITER, DEFAULT_TOL, SparseCodeSet, sparse_code_blocks

# blocks per leaf of the pairwise gradient reduction; fixed so sums never
# depend on how work is split
_LEAF = 32


class StationaryDirection(RuntimeError):
    """The descent direction vanishes on every block; no step is possible."""


@dataclass
class LearnConfig:
    lambda0: float = 0.05
    lambda_star: float = 0.001
    T_star: int = 10
    T_max: int = 20
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    seed: int = 0
    record_history: bool = True
    n_jobs: int = 1
    recovery_lam: float | None = None
    stop_rtol: float = 1e-12

    def __post_init__(self):
        if not (0 < self.lambda_star <= self.lambda0):
            raise ValueError("need 0 < lambda_star <= lambda0")
        if self.T_star < 1:
            raise ValueError("T_star must be >= 1")
        if self.T_max < 0:
            raise ValueError("T_max must be >= 0")

    @property
    def final_lam(self) -> float:
        return self.lambda_star if self.recovery_lam is None else self.recovery_lam


@dataclass
class IterationRecord:
    t: int
    lam: float
    objective: float
    step: float
    grad_norm: float
    psnr: float | None = None


@dataclass
class LearnHistory:
    records: list[IterationRecord] = field(default_factory=list)
    initial_psnr: float | None = None
    stopped_early: bool = False

    def __len__(self):
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records], dtype=float)

    def to_csv(self) -> str:
        """CSV text with columns ``t, lambda, objective, step, grad_norm, psnr``.

        Floats use round-trip ``repr`` formatting; ``psnr`` is empty when no
        reference image was supplied.
        """
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["t", "lambda", "objective", "step", "grad_norm", "psnr"])
        for r in self.records:
            writer.writerow([r.t, repr(float(r.lam)), repr(float(r.objective)),
                             repr(float(r.step)), repr(float(r.grad_norm)),
                             "" if r.psnr is None else repr(float(r.psnr))])
        return buf.getvalue()


def lambda_schedule(t: int, cfg: LearnConfig) -> float:
    """Exponential decay from ``lambda0`` to ``lambda_star`` over ``T_star`` iterations."""
    if t < 0:
        raise ValueError("t must be >= 0")
    decayed = cfg.lambda0 * math.exp(-(t / cfg.T_star) * math.log(cfg.lambda0 / cfg.lambda_star))
    return max(decayed, cfg.lambda_star)


def sparse_coding_stage(mset: BlockMeasurementSet, D, lam, cfg: LearnConfig | None = None,
                        warm: SparseCodeSet | None = None) -> SparseCodeSet:
    cfg = cfg or LearnConfig()
    alpha0 = None if warm is None else warm.alpha
    return sparse_code_blocks(mset.phis, D, mset.y, lam, cfg.tol, cfg.max_iter, alpha0, cfg.n_jobs)


def tree_sum(chunks: list[np.ndarray]) -> np.ndarray:
    """Pairwise reduction in a fixed left-to-right tree order."""
    while len(chunks) > 1:
        paired = [chunks[i] + chunks[i + 1] for i in range(0, len(chunks) - 1, 2)]
        if len(chunks) % 2:
            paired.append(chunks[-1])
        chunks = paired
    return chunks[0]


def measurement_residuals(mset: BlockMeasurementSet, D, alpha) -> np.ndarray:
    """``r_j = y_j - Phi_j D alpha_j`` for every block, shape ``(N, m)``."""
    blocks = np.einsum("np,jp->jn", D, alpha)
    return mset.y - np.einsum("jmn,jn->jm", mset.phis, blocks)


def compute_gradient(mset: BlockMeasurementSet, D, codes: SparseCodeSet) -> np.ndarray:
    """``-sum_j Phi_j^T (y_j - Phi_j D alpha_j) alpha_j^T``."""
    alpha = codes.alpha
    if alpha.shape != (mset.N, D.shape[1]):
        raise ValueError(f"codes {alpha.shape} do not match {mset.N} blocks and {D.shape[1]} atoms")
    back = np.einsum("jmn,jm->jn", mset.phis, measurement_residuals(mset, D, alpha))
    leaves = [np.einsum("jn,jp->np", back[a:a + _LEAF], alpha[a:a + _LEAF])
              for a in range(0, mset.N, _LEAF)]
    return -tree_sum(leaves)


def misfit_objective(mset: BlockMeasurementSet, D, codes: SparseCodeSet) -> float:
    """``0.5*sum_j ||y_j - Phi_j D alpha_j||^2 + lam*sum_j ||alpha_j||_1``."""
    r = measurement_residuals(mset, D, codes.alpha)
    return 0.5 * float(np.sum(r * r)) + codes.lam * codes.l1()


def optimal_step(mset: BlockMeasurementSet, G, codes: SparseCodeSet) -> float:
    """Exact minimizer of the misfit along ``D - mu*G``: ``||G||_F^2 / sum_j ||Phi_j G alpha_j||^2``."""
    num = float(np.sum(G * G))
    image = np.einsum("jmn,jn->jm", mset.phis, np.einsum("np,jp->jn", G, codes.alpha))
    den = float(np.sum(image * image))
    if num == 0.0 or den == 0.0:
        raise StationaryDirection("gradient is zero on every measured block")
    return num / den


def dlm_learn(mset: BlockMeasurementSet, D0, cfg: LearnConfig | None = None, reference=None):
    """Run DL-M for ``cfg.T_max`` iterations.

    Returns ``(D, codes, history)`` where ``codes`` are the last sparse-coding
    stage's codes. When ``reference`` is given, the PSNR of the recovery with
    each updated dictionary is recorded; learning never reads the reference.
    """
    cfg = cfg or LearnConfig()
    D = np.array(D0, dtype=float, copy=True)
    history = LearnHistory()
    codes = None
    if reference is not None:
        history.initial_psnr = _recovery_psnr(mset, D, cfg, reference)
    for t in range(cfg.T_max):
        lam = lambda_schedule(t, cfg)
        codes = sparse_coding_stage(mset, D, lam, cfg, warm=codes)
        objective = misfit_objective(mset, D, codes)
        G = compute_gradient(mset, D, codes)
        grad_norm = float(np.linalg.norm(G))
        if grad_norm <= cfg.stop_rtol * np.linalg.norm(D):
            history.stopped_early = True
            break
        try:
            step = optimal_step(mset, G, codes)
        except StationaryDirection:
            history.stopped_early = True
            break
        D = normalize_frobenius(D - step * G)
        score = None if reference is None else _recovery_psnr(mset, D, cfg, reference)
        if cfg.record_history:
            history.records.append(IterationRecord(t, lam, objective, step, grad_norm, score))
    return D, codes, history


def _recovery_psnr(mset, D, cfg, reference) -> float:
    img = recover_image(mset, D, cfg.final_lam, clamp=True, tol=cfg.tol,
                        max_iter=cfg.max_iter, n_jobs=cfg.n_jobs)
    return psnr(reference, img)


def identity_measurements(blocks, means=None, geometry=(0, 0, 0)) -> BlockMeasurementSet:
    """Complete-data measurement set: ``Phi_j = I`` and ``y_j = x_j``."""
    blocks = np.asarray(blocks, dtype=float)
    N, n = blocks.shape
    phis = np.broadcast_to(np.eye(n), (N, n, n))
    means = np.zeros(N) if means is None else np.asarray(means, dtype=float)
    edge, width, height = geometry
    return BlockMeasurementSet(phis, blocks.copy(), means, Scheme.EXPLICIT, 0, edge, width, height)


def dl_learn(blocks, D0, cfg: LearnConfig | None = None, reference=None):
    """Complete-data dictionary learning on centered blocks ``(N, n)``."""
    if hasattr(blocks, "vectors"):
        mset = identity_measurements(blocks.vectors, blocks.means,
                                     (blocks.block_edge, blocks.width, blocks.height))
    else:
        mset = identity_measurements(blocks)
    return dlm_learn(mset, D0, cfg, reference)
