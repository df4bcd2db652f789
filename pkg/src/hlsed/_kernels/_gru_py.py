"""Pure numpy GRU recurrence; reference and fallback for the Cython kernel.

Layout is time-major: ``xproj`` is ``(T, B, 3H)`` holding the input
projections ``x_t @ W + b`` for the update (z), reset (r) and candidate (n)
gates in that order.  ``U`` is ``(H, 3H)``.

    z = sigmoid(xz + h @ Uz)
    r = sigmoid(xr + h @ Ur)
    n = tanh(xn + (r * h) @ Un)
    h' = (1 - z) * n + z * h
"""
import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_forward(xproj, U, h0):
    T, B, H3 = xproj.shape
    H = H3 // 3
    dtype = xproj.dtype
    hs = np.empty((T, B, H), dtype=dtype)
    z = np.empty((T, B, H), dtype=dtype)
    r = np.empty((T, B, H), dtype=dtype)
    n = np.empty((T, B, H), dtype=dtype)
    U_zr, U_n = U[:, : 2 * H], U[:, 2 * H:]
    h = h0
    for t in range(T):
        g = h @ U_zr
        z[t] = _sigmoid(xproj[t, :, :H] + g[:, :H])
        r[t] = _sigmoid(xproj[t, :, H:2 * H] + g[:, H:])
        n[t] = np.tanh(xproj[t, :, 2 * H:] + (r[t] * h) @ U_n)
        h = (1.0 - z[t]) * n[t] + z[t] * h
        hs[t] = h
    return hs, z, r, n


def gru_backward(dhs, U, h0, hs, z, r, n):
    """Return ``(da, dh0)`` where ``da`` is the gradient wrt gate pre-activations."""
    T, B, H = hs.shape
    da = np.empty((T, B, 3 * H), dtype=hs.dtype)
    U_zr, U_n = U[:, : 2 * H], U[:, 2 * H:]
    dh = np.zeros((B, H), dtype=hs.dtype)
    for t in range(T - 1, -1, -1):
        dh = dh + dhs[t]
        hp = hs[t - 1] if t > 0 else h0
        zt, rt, nt = z[t], r[t], n[t]
        dan = dh * (1.0 - zt) * (1.0 - nt * nt)
        drh = dan @ U_n.T
        daz = dh * (hp - nt) * zt * (1.0 - zt)
        dar = drh * hp * rt * (1.0 - rt)
        da[t, :, :H] = daz
        da[t, :, H:2 * H] = dar
        da[t, :, 2 * H:] = dan
        dh = dh * zt + drh * rt + da[t, :, : 2 * H] @ U_zr.T
    return da, dh
