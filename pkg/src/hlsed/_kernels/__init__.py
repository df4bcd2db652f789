"""GRU recurrence kernels, compiled when available.

The Cython extension is used if it was built; otherwise, or when the
environment variable ``HLSED_PURE_PYTHON=1`` is set, the numpy version is
used.  ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _gru_py

_compiled = None
if os.environ.get("HLSED_PURE_PYTHON") != "1":
    try:
        from . import _gru as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _impl(backend):
    backend = backend or BACKEND
    if backend == "cython":
        if _compiled is None:
            raise RuntimeError("compiled GRU kernel is not available")
        return _compiled
    return _gru_py


def gru_forward(xproj, U, h0, backend=None):
    dtype = xproj.dtype
    args = [np.ascontiguousarray(a, dtype=dtype) for a in (xproj, U, h0)]
    return _impl(backend).gru_forward(*args)


def gru_backward(dhs, U, h0, hs, z, r, n, backend=None):
    dtype = hs.dtype
    args = [np.ascontiguousarray(a, dtype=dtype) for a in (dhs, U, h0, hs, z, r, n)]
    return _impl(backend).gru_backward(*args)


def compiled_available():
    return _compiled is not None
