"""Grayscale images, block extraction with centering, recovery and PSNR.

Images are 2-D float arrays with intensities nominally in ``[0, 1]``.
Blocks are taken in raster order and vectorized column-major.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse import DEFAULT_MAX_ITER, DEFAULT_TOL, sparse_code_blocks

PSNR_REPORT_CAP = 120.0


class ImageError(ValueError):
    pass


@dataclass
class BlockSet:
    """Centered block vectors ``(N, n)``, their means and the tiling geometry.

    ``correction`` holds the exact floating-point rounding residue of the
    centering step, so ``reassemble`` on an untouched set returns the source
    bit for bit. Sets built from recovered blocks leave it as ``None``.
    """

    vectors: np.ndarray
    means: np.ndarray
    block_edge: int
    width: int
    height: int
    correction: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.vectors.shape[0]

    @property
    def n(self) -> int:
        return self.vectors.shape[1]

    def with_vectors(self, vectors) -> "BlockSet":
        return BlockSet(np.asarray(vectors, dtype=float), self.means.copy(),
                        self.block_edge, self.width, self.height)


def _tile(img: np.ndarray, e: int) -> np.ndarray:
    H, W = img.shape
    return img.reshape(H // e, e, W // e, e).transpose(0, 2, 3, 1).reshape(-1, e * e)


def _untile(vectors: np.ndarray, e: int, width: int, height: int) -> np.ndarray:
    return vectors.reshape(height // e, width // e, e, e).transpose(0, 3, 1, 2).reshape(height, width)


def extract_blocks(img, block_edge: int = 8) -> BlockSet:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ImageError("expected a 2-D grayscale image")
    H, W = img.shape
    if block_edge < 1 or H % block_edge or W % block_edge:
        raise ImageError(f"image {W}x{H} is not divisible into {block_edge}x{block_edge} blocks")
    raw = _tile(img, block_edge)
    means = raw.mean(axis=1)
    vectors = raw - means[:, None]
    correction = raw - (vectors + means[:, None])
    return BlockSet(vectors, means, block_edge, W, H, correction)


def overlapping_blocks(img, block_edge: int = 8, stride: int = 1) -> np.ndarray:
    """Centered vectors of all ``block_edge`` windows on a ``stride`` grid, raster order."""
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise ImageError("expected a 2-D grayscale image")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    win = np.lib.stride_tricks.sliding_window_view(img, (block_edge, block_edge))
    win = win[::stride, ::stride]
    raw = win.transpose(0, 1, 3, 2).reshape(-1, block_edge * block_edge)
    return raw - raw.mean(axis=1, keepdims=True)


def reassemble(blocks: BlockSet, clamp: bool = False) -> np.ndarray:
    """Add means back and tile. ``clamp`` clips to ``[0, 1]`` for display/export."""
    e, W, H = blocks.block_edge, blocks.width, blocks.height
    if e < 1 or W % e or H % e or blocks.N != (W // e) * (H // e) or blocks.n != e * e:
        raise ImageError(f"{blocks.N} blocks of length {blocks.n} do not tile a {W}x{H} image "
                         f"with edge {e}")
    raw = blocks.vectors + blocks.means[:, None]
    if blocks.correction is not None:
        raw = raw + blocks.correction
    img = _untile(raw, e, W, H)
    return np.clip(img, 0.0, 1.0) if clamp else img


def psnr(reference, test, peak: float = 1.0) -> float:
    """``10*log10(peak^2 / MSE)`` in dB; ``inf`` for identical images."""
    reference = np.asarray(reference, dtype=float)
    test = np.asarray(test, dtype=float)
    if reference.shape != test.shape:
        raise ImageError(f"shape mismatch {reference.shape} vs {test.shape}")
    if peak <= 0:
        raise ValueError("peak must be positive")
    mse = float(np.mean((reference - test) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(peak * peak / mse))


def capped(value: float, cap: float = PSNR_REPORT_CAP) -> float:
    return min(value, cap)


def recover_block(y, phi, D, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> np.ndarray:
    """Sparse recovery of one centered block, ``D @ argmin 0.5||y - Phi D a||^2 + lam||a||_1``."""
    if lam <= 0:
        raise ValueError("recovery needs lam > 0")
    phi = getattr(phi, "entries", phi)
    y = np.asarray(y, dtype=float)
    codes = sparse_code_blocks(np.asarray(phi, dtype=float)[None], D, y[None], lam, tol, max_iter)
    return np.asarray(D) @ codes.alpha[0]


def recover_blocks(mset, D, lam, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, n_jobs=1,
                   alpha0=None):
    """Recovered centered blocks ``(N, n)`` and their codes."""
    if lam <= 0:
        raise ValueError("recovery needs lam > 0")
    codes = sparse_code_blocks(mset.phis, D, mset.y, lam, tol, max_iter, alpha0, n_jobs)
    return codes.alpha @ np.asarray(D).T, codes


def recover_image(mset, D, lam, clamp: bool = True, tol=DEFAULT_TOL,
                  max_iter=DEFAULT_MAX_ITER, n_jobs=1) -> np.ndarray:
    """Per-block CS recovery followed by mean restoration and tiling."""
    vectors, _ = recover_blocks(mset, D, lam, tol, max_iter, n_jobs)
    blocks = BlockSet(vectors, mset.means, mset.block_edge, mset.width, mset.height)
    return reassemble(blocks, clamp=clamp)


def plant_sparse(img, D_ideal, lam: float = 0.05, block_edge: int = 8,
                 tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER) -> np.ndarray:
    """Replace each centered block by its Lasso approximation under ``D_ideal``.

    The result has an exact sparse representation in ``D_ideal`` (plus the
    block means). It is returned unclamped so that representation stays exact.
    """
    if lam <= 0:
        raise ValueError("planting needs lam > 0")
    blocks = extract_blocks(img, block_edge)
    codes = sparse_code_blocks(None, D_ideal, blocks.vectors, lam, tol, max_iter)
    return reassemble(blocks.with_vectors(codes.alpha @ np.asarray(D_ideal).T))


def synthetic_image(size: int = 128, seed: int = 0) -> np.ndarray:
    """Deterministic textured test image in ``[0, 1]``.

    Smooth shading, oriented gratings at off-grid frequencies, a few disks and
    a band of fine stripes: content an orthogonal DCT represents only loosely.
    """
    rng = np.random.Generator(np.random.Philox(key=seed))
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.45 + 0.25 * np.sin(2.1 * xx + 1.3 * yy) * np.cos(1.7 * yy)
    for _ in range(5):
        cx, cy = rng.uniform(0.15, 0.85, 2)
        theta = rng.uniform(0, np.pi)
        freq = rng.uniform(9.0, 23.0)
        width = rng.uniform(0.12, 0.25)
        envelope = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * width ** 2)))
        phase = 2 * np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta))
        img += 0.22 * envelope * np.sin(phase)
    for _ in range(4):
        cx, cy = rng.uniform(0.1, 0.9, 2)
        r = rng.uniform(0.04, 0.1)
        img[(xx - cx) ** 2 + (yy - cy) ** 2 < r * r] += rng.uniform(-0.2, 0.2)
    band = (yy > 0.7) & (yy < 0.85)
    img[band] += 0.12 * np.sign(np.sin(2 * np.pi * 14.3 * (xx[band] + 0.4 * yy[band])))
    return np.clip(img, 0.0, 1.0)


_PGM_TOKEN = re.compile(rb"(?:\s*(?:#[^\n]*\n)?)*\s*(\S+)")


def load_pgm(path) -> np.ndarray:
    """Read an 8-bit binary PGM (P5); intensities divided by maxval."""
    data = Path(path).read_bytes()
    pos = 0
    fields = []
    for _ in range(4):
        match = _PGM_TOKEN.match(data, pos)
        if match is None:
            raise ImageError("truncated PGM header")
        fields.append(match.group(1))
        pos = match.end()
    if fields[0] != b"P5":
        raise ImageError(f"not a binary PGM (magic {fields[0]!r})")
    width, height, maxval = (int(f) for f in fields[1:])
    if not 0 < maxval < 256:
        raise ImageError(f"only 8-bit PGM supported, maxval={maxval}")
    pos += 1
    pixels = np.frombuffer(data, np.uint8, width * height, pos) if \
        len(data) >= pos + width * height else None
    if pixels is None:
        raise ImageError("truncated PGM pixel data")
    return pixels.reshape(height, width).astype(float) / maxval


def save_pgm(path, img) -> None:
    """Write an 8-bit P5 PGM; values are clipped to ``[0, 1]`` and rounded half-to-even."""
    img = np.asarray(img, dtype=float)
    height, width = img.shape
    pixels = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    Path(path).write_bytes(f"P5\n{width} {height}\n255\n".encode() + pixels.tobytes())


def difference_map(reference, test) -> np.ndarray:
    """Absolute error scaled so the largest difference maps to 1."""
    diff = np.abs(np.asarray(reference, float) - np.asarray(test, float))
    top = diff.max()
    return diff / top if top > 0 else diff
