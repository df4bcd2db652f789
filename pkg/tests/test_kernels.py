import os
import subprocess
import sys

import numpy as np
import pytest

from hlsed import _kernels

needs_compiled = pytest.mark.skipif(not _kernels.compiled_available(), reason="extension not built")


def _inputs(rng, T=13, B=3, H=5, dtype=np.float64):
    xproj = rng.standard_normal((T, B, 3 * H)).astype(dtype)
    U = (0.5 * rng.standard_normal((H, 3 * H))).astype(dtype)
    h0 = rng.standard_normal((B, H)).astype(dtype)
    return xproj, U, h0


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_forward_parity(rng, dtype, tol):
    xproj, U, h0 = _inputs(rng, dtype=dtype)
    ref = _kernels.gru_forward(xproj, U, h0, backend="python")
    out = _kernels.gru_forward(xproj, U, h0, backend="cython")
    for a, b in zip(ref, out):
        assert a.dtype == b.dtype == dtype
        assert np.max(np.abs(a - b)) < tol


@needs_compiled
@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-12), (np.float32, 1e-4)])
def test_backward_parity(rng, dtype, tol):
    xproj, U, h0 = _inputs(rng, dtype=dtype)
    hs, z, r, n = _kernels.gru_forward(xproj, U, h0, backend="python")
    dhs = rng.standard_normal(hs.shape).astype(dtype)
    ref = _kernels.gru_backward(dhs, U, h0, hs, z, r, n, backend="python")
    out = _kernels.gru_backward(dhs, U, h0, hs, z, r, n, backend="cython")
    for a, b in zip(ref, out):
        assert np.max(np.abs(a - b)) < tol


def test_python_backward_is_the_adjoint_of_forward(rng):
    # directional derivative of <hs, dhs> along xproj equals <da, dxproj>
    xproj, U, h0 = _inputs(rng)
    hs, z, r, n = _kernels.gru_forward(xproj, U, h0, backend="python")
    dhs = rng.standard_normal(hs.shape)
    da, dh0 = _kernels.gru_backward(dhs, U, h0, hs, z, r, n, backend="python")
    v, u = rng.standard_normal(xproj.shape), rng.standard_normal(h0.shape)
    eps = 1e-6
    f = lambda s: (_kernels.gru_forward(xproj + s * v, U, h0 + s * u, backend="python")[0] * dhs).sum()
    num = (f(eps) - f(-eps)) / (2 * eps)
    assert np.isclose(num, (da * v).sum() + (dh0 * u).sum(), rtol=1e-6)


def test_backend_is_named():
    assert _kernels.BACKEND in ("cython", "python")
    assert (_kernels.BACKEND == "cython") == _kernels.compiled_available()


def test_pure_python_switch():
    env = dict(os.environ, HLSED_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, "-c", "from hlsed import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "python"
