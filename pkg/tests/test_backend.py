import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from folhe import _backend, _core_py

compiled = pytest.importorskip("folhe._core")

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def _hermitian(re, im):
    a = re + 1j * im
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


@given(st.integers(1, 4).flatmap(
    lambda r: st.tuples(arrays(float, (5, r, r), elements=finite),
                        arrays(float, (5, r, r), elements=finite))))
def test_jacobi_matches_lapack(pair):
    a = _hermitian(*pair)
    w, v = compiled.jacobi_eigh_batch(a)
    w_ref = np.linalg.eigvalsh(a)
    scale = 1.0 + np.abs(a).max()
    assert np.abs(w - w_ref).max() < 1e-12 * scale
    recon = v @ (w[..., None] * np.conj(np.swapaxes(v, -1, -2)))
    assert np.abs(recon - a).max() < 1e-12 * scale
    eye = np.conj(np.swapaxes(v, -1, -2)) @ v
    assert np.abs(eye - np.eye(a.shape[-1])).max() < 1e-12


@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_dispatch_agrees_with_fallback(r, rng):
    a = _hermitian(rng.normal(size=(7, 3, r, r)), rng.normal(size=(7, 3, r, r)))
    w1, _ = compiled.eigh_batch(a)
    w2, _ = _core_py.eigh_batch(a)
    assert w1.shape == (7, 3, r)
    np.testing.assert_allclose(w1, w2, atol=1e-12)


def test_diagonal_input_is_exact():
    a = np.diag([3.0, -1.0]).astype(complex)[None]
    w, v = compiled.jacobi_eigh_batch(a)
    assert w.tolist() == [[-1.0, 3.0]]
    assert np.abs(np.abs(v) - np.array([[0, 1], [1, 0]])).max() == 0


def test_env_forces_numpy_fallback():
    env = dict(os.environ, FOLHE_BACKEND="numpy")
    out = subprocess.run([sys.executable, "-c", "import folhe; print(folhe.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_default_backend_is_compiled():
    if os.environ.get("FOLHE_BACKEND", "").lower() == "numpy":
        pytest.skip("fallback forced by environment")
    assert _backend.BACKEND == "compiled"


@pytest.mark.parametrize("raw,expected", [("", 1), ("4", 4), ("0", 1), ("x", 1)])
def test_fft_workers(monkeypatch, raw, expected):
    monkeypatch.setenv("FOLHE_THREADS", raw)
    assert _backend.fft_workers() == expected
