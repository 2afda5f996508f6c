"""Desk-scale recovery experiments: universal vs adaptive dictionary tables.

Presets
-------
set1  planted-sparse image, universal initial dictionary, BIG sampling
set2  as set1 without planting
set3  as set2 with a user-supplied initial dictionary file
set4  as set2 with the orthogonal DCT as initial dictionary
set5  as set2 with pixel (inpainting) sampling

The universal dictionary is learned from other synthetic images and the
planting dictionary from overlapping blocks of the test image itself.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .dictionary import init_overcomplete_dct, load_dictionary
from .imaging import (extract_blocks, overlapping_blocks, plant_sparse, psnr,
                      recover_image, synthetic_image)
from .learn import LearnConfig, dl_learn, dlm_learn
from .measurement import Scheme, measure_image

PRESETS = ("set1", "set2", "set3", "set4", "set5")
DEFAULT_RATIOS = (0.05, 0.1, 0.2, 0.25, 0.3, 0.4, 0.5)

# full-scale Barbara results (universal, adaptive) per ratio; annotation only
REFERENCE_PSNR = {
    "set1": ((22.14, 22.20), (23.01, 23.22), (25.19, 25.99), (26.52, 27.88),
             (27.43, 29.39), (29.19, 32.05), (31.09, 34.85)),
    "set2": ((21.17, 21.23), (21.94, 22.06), (23.77, 24.33), (24.88, 25.75),
             (25.65, 26.84), (27.09, 28.80), (28.55, 30.83)),
    "set3": ((21.08, 21.17), (21.76, 21.95), (23.25, 23.70), (24.06, 24.82),
             (24.64, 25.78), (25.76, 27.60), (27.16, 29.76)),
    "set4": ((20.60, 20.97), (21.07, 21.91), (22.50, 23.50), (23.53, 24.72),
             (24.33, 25.81), (25.97, 27.57), (28.06, 29.66)),
    "set5": ((21.19, 21.31), (21.89, 21.90), (23.78, 24.35), (24.90, 25.81),
             (25.66, 26.86), (27.06, 28.68), (28.40, 30.53)),
}


def ratio_to_m(ratio: float, n: int) -> int:
    """Measurements per block for a sampling ratio: ``floor(ratio*n)``, at least 1."""
    if not 0 < ratio <= 1:
        raise ValueError(f"sampling ratio must be in (0, 1], got {ratio}")
    return max(1, math.floor(ratio * n + 1e-9))


def default_T_star(m: int, n: int) -> int:
    """Decay length proportional to ``m``: ``ceil(10*m/n)`` clamped to ``[1, 10]``."""
    return min(10, max(1, math.ceil(10 * m / n)))


def reference_row(preset: str, ratio: float):
    for r, ref in zip(DEFAULT_RATIOS, REFERENCE_PSNR.get(preset, ())):
        if abs(r - ratio) < 1e-12:
            return ref
    return (None, None)


@dataclass
class ExperimentSettings:
    preset: str = "set1"
    ratios: tuple = DEFAULT_RATIOS
    p: int = 64
    scheme: str | None = None
    seed: int = 0
    block_edge: int = 8
    lambda0: float = 0.05
    lambda_star: float = 0.001
    T_star: int | None = None
    T_max: int = 20
    recovery_lam: float | None = None
    plant_lam: float = 0.05
    trials: int = 1
    dict_path: str | None = None
    train_images: int = 3
    train_stride: int = 4
    n_jobs: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.preset == "set3" and not self.dict_path:
            raise ValueError("set3 needs an initial dictionary file")
        for r in self.ratios:
            if not 0 < r <= 1:
                raise ValueError(f"sampling ratio must be in (0, 1], got {r}")

    @property
    def resolved_scheme(self) -> Scheme:
        if self.scheme is not None:
            return Scheme.parse(self.scheme)
        return Scheme.INPAINTING if self.preset == "set5" else Scheme.BIG


def _complete_cfg(settings: ExperimentSettings) -> LearnConfig:
    return LearnConfig(lambda0=settings.lambda0, lambda_star=settings.lambda_star, T_star=10,
                       T_max=settings.T_max, n_jobs=settings.n_jobs)


def universal_dictionary(n: int, p: int, settings: ExperimentSettings) -> np.ndarray:
    """Complete-data dictionary learned from synthetic images other than the test image."""
    edge = math.isqrt(n)
    train = np.concatenate([
        overlapping_blocks(synthetic_image(128, seed=settings.seed + 1 + k), edge,
                           settings.train_stride)
        for k in range(settings.train_images)])
    D, _, _ = dl_learn(train, init_overcomplete_dct(n, p), _complete_cfg(settings))
    return D


def ideal_dictionary(img, p: int, settings: ExperimentSettings) -> np.ndarray:
    """Complete-data dictionary learned from overlapping blocks of ``img`` itself."""
    edge = settings.block_edge
    train = overlapping_blocks(img, edge, settings.train_stride)
    D, _, _ = dl_learn(train, init_overcomplete_dct(edge * edge, p), _complete_cfg(settings))
    return D


def prepare(img, settings: ExperimentSettings):
    """Test image (planted for set1) and the initial dictionary for a preset."""
    n = settings.block_edge ** 2
    if settings.preset == "set1":
        img, _ = prepare_planted(img, settings)
    if settings.preset == "set3":
        D0 = load_dictionary(settings.dict_path)
        if D0.shape[0] != n:
            raise ValueError(f"dictionary has {D0.shape[0]} rows, blocks have {n} pixels")
    elif settings.preset == "set4":
        D0 = init_overcomplete_dct(n, n)
    else:
        D0 = universal_dictionary(n, settings.p, settings)
    return img, D0


def planted_image(seed: int = 0, size: int = 128, p: int = 64) -> np.ndarray:
    """Synthetic image planted with its own ideal dictionary (set1 protocol)."""
    return _planted_cached(seed, size, p).copy()


@functools.lru_cache(maxsize=4)
def _planted_cached(seed, size, p):
    settings = ExperimentSettings(preset="set1", p=p, seed=seed)
    img, _ = prepare_planted(synthetic_image(size, seed=seed), settings)
    return img


def prepare_planted(img, settings: ExperimentSettings):
    D_ideal = ideal_dictionary(img, settings.p, settings)
    return plant_sparse(img, D_ideal, settings.plant_lam, settings.block_edge), D_ideal


def _trial_seed(seed: int, trial: int) -> int:
    ss = np.random.SeedSequence([seed & ((1 << 64) - 1), trial])
    return int(ss.generate_state(1, np.uint64)[0])


def run_ratio(img, D0, ratio: float, settings: ExperimentSettings, trial: int = 0):
    """One measurement draw: universal and adaptive recovery PSNRs."""
    blocks = extract_blocks(img, settings.block_edge)
    m = ratio_to_m(ratio, blocks.n)
    seed = settings.seed if trial == 0 else _trial_seed(settings.seed, trial)
    mset = measure_image(blocks, m, settings.resolved_scheme, seed)
    T_star = settings.T_star or default_T_star(m, blocks.n)
    cfg = LearnConfig(lambda0=settings.lambda0, lambda_star=settings.lambda_star,
                      T_star=T_star, T_max=settings.T_max, seed=seed,
                      recovery_lam=settings.recovery_lam, n_jobs=settings.n_jobs)
    universal = psnr(img, recover_image(mset, D0, cfg.final_lam, n_jobs=settings.n_jobs))
    D, _, history = dlm_learn(mset, D0, cfg)
    adaptive = psnr(img, recover_image(mset, D, cfg.final_lam, n_jobs=settings.n_jobs))
    return {"m": m, "universal": universal, "adaptive": adaptive, "iterations": len(history)}


def run_preset(img, settings: ExperimentSettings):
    """Rows of the universal-vs-adaptive table, one per sampling ratio."""
    img, D0 = prepare(img, settings)
    rows = []
    for ratio in settings.ratios:
        trials = [run_ratio(img, D0, ratio, settings, t) for t in range(settings.trials)]
        ref_u, ref_a = reference_row(settings.preset, ratio)
        uni = float(np.mean([t["universal"] for t in trials]))
        ada = float(np.mean([t["adaptive"] for t in trials]))
        rows.append({"ratio": ratio, "m": trials[0]["m"], "universal_psnr": uni,
                     "adaptive_psnr": ada, "gain": ada - uni, "trials": settings.trials,
                     "reference_universal": ref_u, "reference_adaptive": ref_a})
    return rows


def fixed_vs_varying(img, D0, m: int, lam: float = 0.01, T_max: int = 20, seed: int = 0,
                     block_edge: int = 8, n_jobs: int = 1):
    """Per-iteration recovery PSNR for shared vs per-block orthonormalized sensing.

    Uses a constant penalty ``lam`` for both coding and recovery.
    """
    blocks = extract_blocks(img, block_edge)
    cfg = LearnConfig(lambda0=lam, lambda_star=lam, T_star=1, T_max=T_max, seed=seed,
                      n_jobs=n_jobs)
    out = {}
    for name, scheme in (("varying", Scheme.BIG_ORTHONORMALIZED), ("fixed", Scheme.FIXED_SHARED)):
        mset = measure_image(blocks, m, scheme, seed)
        _, _, history = dlm_learn(mset, D0, cfg, reference=img)
        out[name] = history
    return out

