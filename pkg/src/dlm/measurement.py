"""Block-wise sensing matrices, measurement and the BCS1 measurement-set format.

Random streams come from numpy's counter-based Philox generator. A matrix is a
pure function of ``(key, m, n, scheme)``; per-block keys pack the master seed
in the low 64 bits and the block index in the high 64 bits of the 128-bit
Philox key, so block ``j`` of master seed ``s`` uses key ``s | (j << 64)``.
Gaussian entries use ``Generator.standard_normal`` (ziggurat) scaled by
``1/sqrt(m)``.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MASK64 = (1 << 64) - 1

BCS_MAGIC = b"BCS1"
# magic, N, m, n, scheme, master seed, block_edge, width, height
_BCS_HEADER = struct.Struct("<4sIIIBQIII")


class Scheme(enum.IntEnum):
    BIG = 0
    BIG_ORTHONORMALIZED = 1
    FIXED_SHARED = 2
    INPAINTING = 3
    EXPLICIT = 4

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        aliases = {
            "big": cls.BIG,
            "big-ortho": cls.BIG_ORTHONORMALIZED,
            "big_orthonormalized": cls.BIG_ORTHONORMALIZED,
            "fixed": cls.FIXED_SHARED,
            "fixed_shared": cls.FIXED_SHARED,
            "inpaint": cls.INPAINTING,
            "inpainting": cls.INPAINTING,
            "explicit": cls.EXPLICIT,
        }
        try:
            return aliases[name.lower()]
        except KeyError:
            raise ValueError(f"unknown sensing scheme {name!r}") from None


class MeasurementFormatError(ValueError):
    pass


def block_key(seed: int, j: int) -> int:
    """Philox key of block ``j`` under master ``seed``."""
    return (int(seed) & MASK64) | (int(j) << 64)


def _generator(key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SensingMatrix:
    entries: np.ndarray
    scheme: Scheme
    seed: int | None = None

    @property
    def m(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]


def _check_dims(m: int, n: int) -> None:
    if m < 1 or n < 1:
        raise ValueError(f"need m >= 1 and n >= 1, got m={m}, n={n}")
    if m > n:
        raise ValueError(f"need m <= n, got m={m}, n={n}")


def orthonormalize_rows(phi: np.ndarray) -> np.ndarray:
    """Gram-Schmidt on the rows of ``phi`` (via QR, signs fixed so diag(R) > 0)."""
    q, r = np.linalg.qr(phi.T)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return np.ascontiguousarray((q * signs).T)


def _big_entries(key: int, m: int, n: int, orthonormalize: bool) -> np.ndarray:
    phi = _generator(key).standard_normal((m, n)) / np.sqrt(m)
    if orthonormalize:
        phi = orthonormalize_rows(phi)
    return phi


def _inpainting_entries(key: int, m: int, n: int) -> np.ndarray:
    rows = _generator(key).choice(n, size=m, replace=False)
    phi = np.zeros((m, n))
    phi[np.arange(m), rows] = 1.0
    return phi


def gen_big_matrix(seed: int, m: int, n: int, orthonormalize: bool = False) -> SensingMatrix:
    """Gaussian sensing matrix with i.i.d. N(0, 1/m) entries.

    With ``orthonormalize`` the rows are orthonormalized afterwards, which makes
    the variance scaling irrelevant.
    """
    _check_dims(m, n)
    scheme = Scheme.BIG_ORTHONORMALIZED if orthonormalize else Scheme.BIG
    return SensingMatrix(_big_entries(int(seed), m, n, orthonormalize), scheme, int(seed))


def gen_inpainting_matrix(seed: int, m: int, n: int) -> SensingMatrix:
    """Pixel-selection matrix: ``m`` distinct rows of the identity."""
    _check_dims(m, n)
    return SensingMatrix(_inpainting_entries(int(seed), m, n), Scheme.INPAINTING, int(seed))


def measure_block(phi, x) -> np.ndarray:
    phi = phi.entries if isinstance(phi, SensingMatrix) else np.asarray(phi, dtype=float)
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != phi.shape[1]:
        raise ValueError(f"block of length {x.shape} does not match sensing matrix {phi.shape}")
    return phi @ x


def generate_block_matrices(scheme: Scheme, seed: int, N: int, m: int, n: int) -> np.ndarray:
    """Stack of ``N`` sensing matrices, shape ``(N, m, n)``.

    ``FIXED_SHARED`` returns a read-only broadcast view of one matrix.
    """
    scheme = Scheme(scheme)
    _check_dims(m, n)
    if scheme == Scheme.FIXED_SHARED:
        # the shared matrix is drawn as raw BIG then orthonormalized, matching big-ortho
        phi = _big_entries(int(seed), m, n, orthonormalize=True)
        return np.broadcast_to(phi, (N, m, n))
    if scheme == Scheme.EXPLICIT:
        raise ValueError("explicit scheme has no generator; pass matrices directly")
    out = np.empty((N, m, n))
    for j in range(N):
        key = block_key(seed, j)
        if scheme == Scheme.INPAINTING:
            out[j] = _inpainting_entries(key, m, n)
        else:
            out[j] = _big_entries(key, m, n, scheme == Scheme.BIG_ORTHONORMALIZED)
    return out


@dataclass
class BlockMeasurementSet:
    """Measurements ``y_j = Phi_j x_j`` of ``N`` centered blocks plus side info.

    ``phis`` always has shape ``(N, m, n)``; for the shared scheme it is a
    broadcast view so every record references the same matrix.
    """

    phis: np.ndarray
    y: np.ndarray
    means: np.ndarray
    scheme: Scheme
    seed: int = 0
    block_edge: int = 0
    width: int = 0
    height: int = 0

    def __post_init__(self):
        self.scheme = Scheme(self.scheme)
        if self.phis.ndim != 3:
            raise ValueError("phis must have shape (N, m, n)")
        N, m, _ = self.phis.shape
        if self.y.shape != (N, m):
            raise ValueError(f"y has shape {self.y.shape}, expected {(N, m)}")
        if self.means.shape != (N,):
            raise ValueError(f"means has shape {self.means.shape}, expected {(N,)}")

    @property
    def N(self) -> int:
        return self.phis.shape[0]

    @property
    def m(self) -> int:
        return self.phis.shape[1]

    @property
    def n(self) -> int:
        return self.phis.shape[2]

    @property
    def shared(self) -> bool:
        return self.scheme == Scheme.FIXED_SHARED

    def matrix(self, j: int) -> SensingMatrix:
        seed = None
        if self.scheme in (Scheme.BIG, Scheme.BIG_ORTHONORMALIZED, Scheme.INPAINTING):
            seed = block_key(self.seed, j)
        return SensingMatrix(self.phis[j], self.scheme, seed)

    def geometry(self) -> tuple[int, int, int]:
        return self.block_edge, self.width, self.height


def measure_blocks(blocks, phis, means=None, scheme=Scheme.EXPLICIT, seed=0, geometry=(0, 0, 0)):
    """Measure centered blocks ``(N, n)`` with a given stack of matrices."""
    blocks = np.asarray(blocks, dtype=float)
    phis = np.asarray(phis, dtype=float)
    if phis.ndim == 2:
        phis = np.broadcast_to(phis, (blocks.shape[0],) + phis.shape)
    if phis.shape[0] != blocks.shape[0] or phis.shape[2] != blocks.shape[1]:
        raise ValueError(f"matrices {phis.shape} do not match blocks {blocks.shape}")
    y = np.einsum("jmn,jn->jm", phis, blocks)
    if means is None:
        means = np.zeros(blocks.shape[0])
    edge, width, height = geometry
    return BlockMeasurementSet(phis, y, np.asarray(means, dtype=float), Scheme(scheme),
                               int(seed), edge, width, height)


def measure_image(blocks, m: int, scheme="big", seed: int = 0, means=None, geometry=(0, 0, 0)):
    """Measure every centered block under a named scheme.

    ``blocks`` is either an ``(N, n)`` array or an :class:`dlm.imaging.BlockSet`,
    whose means and geometry are carried over as side info.
    """
    if hasattr(blocks, "vectors"):
        means = blocks.means if means is None else means
        geometry = (blocks.block_edge, blocks.width, blocks.height)
        blocks = blocks.vectors
    blocks = np.asarray(blocks, dtype=float)
    if blocks.ndim != 2 or blocks.shape[0] == 0:
        raise ValueError("need a non-empty (N, n) array of blocks")
    scheme = Scheme.parse(scheme) if isinstance(scheme, str) else Scheme(scheme)
    N, n = blocks.shape
    phis = generate_block_matrices(scheme, seed, N, m, n)
    return measure_blocks(blocks, phis, means, scheme, seed, geometry)


def save_measurements(path, mset: BlockMeasurementSet) -> None:
    """Write a BCS1 file.

    Layout (little-endian): 37-byte header ``4s I I I B Q I I I`` holding magic,
    N, m, n, scheme, master seed, block_edge, width, height; then the stored
    matrices (one ``m x n`` f64 row-major matrix for the shared scheme, ``N`` of
    them for the explicit scheme, none for seeded schemes); then ``N`` records
    of ``f64 mean`` followed by ``m`` f64 measurements.
    """
    header = _BCS_HEADER.pack(BCS_MAGIC, mset.N, mset.m, mset.n, int(mset.scheme),
                              mset.seed & MASK64, mset.block_edge, mset.width, mset.height)
    parts = [header]
    if mset.scheme == Scheme.FIXED_SHARED:
        parts.append(np.ascontiguousarray(mset.phis[0], dtype="<f8").tobytes())
    elif mset.scheme == Scheme.EXPLICIT:
        parts.append(np.ascontiguousarray(mset.phis, dtype="<f8").tobytes())
    records = np.concatenate([mset.means[:, None], mset.y], axis=1)
    parts.append(np.ascontiguousarray(records, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_measurements(path) -> BlockMeasurementSet:
    data = Path(path).read_bytes()
    if len(data) < _BCS_HEADER.size:
        raise MeasurementFormatError("file too short for a BCS1 header")
    magic, N, m, n, scheme, seed, edge, width, height = _BCS_HEADER.unpack_from(data)
    if magic != BCS_MAGIC:
        raise MeasurementFormatError(f"bad magic {magic!r}")
    try:
        scheme = Scheme(scheme)
    except ValueError:
        raise MeasurementFormatError(f"unknown scheme code {scheme}") from None
    offset = _BCS_HEADER.size
    n_stored = {Scheme.FIXED_SHARED: 1, Scheme.EXPLICIT: N}.get(scheme, 0)
    expected = offset + 8 * (n_stored * m * n + N * (m + 1))
    if len(data) != expected:
        raise MeasurementFormatError(f"expected {expected} bytes, found {len(data)}")
    if n_stored:
        stored = np.frombuffer(data, "<f8", n_stored * m * n, offset).reshape(n_stored, m, n)
        offset += stored.nbytes
        phis = np.broadcast_to(stored[0].copy(), (N, m, n)) if scheme == Scheme.FIXED_SHARED \
            else stored.astype(float)
    else:
        phis = generate_block_matrices(scheme, seed, N, m, n)
    records = np.frombuffer(data, "<f8", N * (m + 1), offset).reshape(N, m + 1).astype(float)
    return BlockMeasurementSet(phis, records[:, 1:].copy(), records[:, 0].copy(), scheme,
                               seed, edge, width, height)
