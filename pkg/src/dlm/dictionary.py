"""Dictionaries: overcomplete DCT frames, Frobenius projection and DIC1 files.

A dictionary is a plain ``(n, p)`` float array whose columns are atoms for
column-major vectorized ``sqrt(n) x sqrt(n)`` blocks.
"""

from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

DIC_MAGIC = b"DIC1"
# magic, n, p, reserved (pads the f64 payload to an 8-byte boundary)
_DIC_HEADER = struct.Struct("<4sIII")


class DictionaryError(ValueError):
    pass


def _isqrt_exact(v: int, name: str) -> int:
    r = math.isqrt(v)
    if r * r != v:
        raise DictionaryError(f"{name}={v} is not a perfect square")
    return r


def dct_frame_1d(length: int, atoms: int) -> np.ndarray:
    """Sampled DCT-II cosines ``cos(pi*(2i+1)*k/(2*atoms))`` with unit columns."""
    i = np.arange(length)[:, None]
    k = np.arange(atoms)[None, :]
    V = np.cos(np.pi * (2 * i + 1) * k / (2 * atoms))
    return V / np.linalg.norm(V, axis=0)


def init_overcomplete_dct(n: int, p: int) -> np.ndarray:
    """Separable 2-D (overcomplete) DCT dictionary of shape ``(n, p)``.

    ``p == n`` gives the orthogonal 2-D DCT-II basis. Atom ``a*sqrt(p) + b`` is
    the column-major vectorization of ``v_b v_a^T``.
    """
    s = _isqrt_exact(n, "n")
    r = _isqrt_exact(p, "p")
    if p < n:
        raise DictionaryError(f"need p >= n, got n={n}, p={p}")
    V = dct_frame_1d(s, r)
    return normalize_frobenius(np.kron(V, V))


def normalize_frobenius(D: np.ndarray) -> np.ndarray:
    """Rescale ``D`` onto the sphere ``||D||_F = sqrt(p)``.

    This is the closest point of that sphere to ``D``.
    """
    D = np.asarray(D, dtype=float)
    norm = np.linalg.norm(D)
    if not np.isfinite(norm) or norm == 0.0:
        raise DictionaryError("cannot normalize a zero or non-finite dictionary")
    return D * (np.sqrt(D.shape[1]) / norm)


def save_dictionary(D: np.ndarray, path) -> None:
    """Write ``D`` as DIC1: 16-byte header (magic, u32 n, u32 p, u32 0) then f64 row-major."""
    D = np.asarray(D, dtype=float)
    n, p = D.shape
    payload = np.ascontiguousarray(D, dtype="<f8").tobytes()
    Path(path).write_bytes(_DIC_HEADER.pack(DIC_MAGIC, n, p, 0) + payload)


def load_dictionary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _DIC_HEADER.size:
        raise DictionaryError("file too short for a DIC1 header")
    magic, n, p, _ = _DIC_HEADER.unpack_from(data)
    if magic != DIC_MAGIC:
        raise DictionaryError(f"bad magic {magic!r}")
    expected = _DIC_HEADER.size + 8 * n * p
    if len(data) != expected:
        raise DictionaryError(f"header says {n}x{p} ({expected} bytes), file has {len(data)}")
    D = np.frombuffer(data, "<f8", n * p, _DIC_HEADER.size).reshape(n, p).astype(float)
    if not np.all(np.isfinite(D)):
        raise DictionaryError("dictionary contains non-finite entries")
    return D
