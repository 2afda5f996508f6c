import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from dlm.dictionary import (DictionaryError, dct_frame_1d, init_overcomplete_dct,
                            load_dictionary, normalize_frobenius, save_dictionary)


def test_orthogonal_dct():
    D = init_overcomplete_dct(64, 64)
    assert np.allclose(D.T @ D, np.eye(64), atol=1e-8)


def test_overcomplete_norm_and_unit_columns():
    D = init_overcomplete_dct(64, 256)
    assert np.linalg.norm(D) == pytest.approx(16.0, abs=1e-10)
    assert np.allclose(np.linalg.norm(D, axis=0), 1.0, atol=1e-12)


def test_dc_atom():
    D = init_overcomplete_dct(4, 4)
    assert np.allclose(D[:, 0], 0.5)


def test_atom_is_separable_outer_product():
    V = dct_frame_1d(4, 5)
    D = init_overcomplete_dct(16, 25)
    a, b = 2, 3
    block = np.outer(V[:, b], V[:, a])
    assert np.allclose(D[:, a * 5 + b], block.ravel(order="F"))


def test_dct_1d_matches_closed_form():
    V = dct_frame_1d(8, 8)
    i, k = 3, 5
    raw = np.cos(np.pi * (2 * i + 1) * k / 16)
    assert V[i, k] == pytest.approx(raw * np.sqrt(2 / 8), abs=1e-14)


@pytest.mark.parametrize("n,p", [(63, 64), (64, 65), (64, 16)])
def test_bad_sizes(n, p):
    with pytest.raises(DictionaryError):
        init_overcomplete_dct(n, p)


def test_normalize_examples(rng):
    D0 = normalize_frobenius(rng.standard_normal((6, 9)))
    assert np.linalg.norm(D0) == pytest.approx(3.0, abs=1e-12)
    assert np.allclose(normalize_frobenius(D0), D0, atol=1e-15)
    assert np.allclose(normalize_frobenius(2 * D0), D0, atol=1e-15)
    with pytest.raises(DictionaryError):
        normalize_frobenius(np.zeros((2, 2)))
    with pytest.raises(DictionaryError):
        normalize_frobenius(np.full((2, 2), np.inf))


@given(arrays(float, (4, 6), elements=st.floats(-10, 10)).filter(lambda a: np.linalg.norm(a) > 1e-6))
def test_normalize_idempotent_and_closest(D):
    P = normalize_frobenius(D)
    assert np.linalg.norm(P) == pytest.approx(np.sqrt(6), rel=1e-12)
    assert np.allclose(normalize_frobenius(P), P, atol=1e-12)
    r = np.random.default_rng(0)
    for _ in range(10):
        other = normalize_frobenius(P + 0.3 * r.standard_normal(P.shape))
        assert np.linalg.norm(other - D) >= np.linalg.norm(P - D) - 1e-12


def test_file_round_trip(tmp_path, rng):
    D = rng.standard_normal((64, 256))
    path = tmp_path / "d.dic"
    save_dictionary(D, path)
    assert path.stat().st_size == 16 + 64 * 256 * 8
    back = load_dictionary(path)
    assert back.tobytes() == D.tobytes()


def test_bad_files(tmp_path, rng):
    path = tmp_path / "d.dic"
    save_dictionary(rng.standard_normal((4, 5)), path)
    data = path.read_bytes()
    cases = {"short": data[:10], "trunc": data[:-8], "magic": b"DICX" + data[4:],
             "nan": data[:16] + np.full(20, np.nan).tobytes()}
    for name, blob in cases.items():
        (tmp_path / name).write_bytes(blob)
        with pytest.raises(DictionaryError):
            load_dictionary(tmp_path / name)
