# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled GRU recurrence.

Same contract as ``_gru_py``; the per-step matrix products go straight to
BLAS through scipy's Cython bindings, and the gate arithmetic runs in C
loops, so the time loop has no Python overhead.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expf
from scipy.linalg.cython_blas cimport sgemm, dgemm

cnp.import_array()

ctypedef fused real:
    float
    double


cdef inline void _gemm_rm(real* A, int lda, real* B, int ldb, real* C, int ldc,
                          int m, int n, int k, real beta, bint trans_b) noexcept nogil:
    # row-major C[m, n] = A[m, k] @ op(B) + beta * C
    # op(B) = B[k, n], or B[n, k]^T when trans_b
    cdef char ta = b'T' if trans_b else b'N'
    cdef char tn = b'N'
    cdef real one = 1.0
    if real is float:
        sgemm(&ta, &tn, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)
    else:
        dgemm(&ta, &tn, &n, &m, &k, &one, B, &ldb, A, &lda, &beta, C, &ldc)


cdef inline real _exp(real x) noexcept nogil:
    # single-precision exp is several times cheaper than tanh from libm
    if real is float:
        return expf(x)
    else:
        return exp(x)


cdef inline real _sig(real x) noexcept nogil:
    return 1.0 / (1.0 + _exp(-x))


cdef inline real _tanh(real x) noexcept nogil:
    return 2.0 * _sig(2.0 * x) - 1.0


def gru_forward(real[:, :, ::1] xproj, real[:, ::1] U, real[:, ::1] h0):
    cdef int T = xproj.shape[0], B = xproj.shape[1], H3 = xproj.shape[2]
    cdef int H = H3 // 3
    dtype = np.float32 if real is float else np.float64
    hs_a = np.empty((T, B, H), dtype=dtype)
    z_a = np.empty((T, B, H), dtype=dtype)
    r_a = np.empty((T, B, H), dtype=dtype)
    n_a = np.empty((T, B, H), dtype=dtype)
    g_a = np.empty((B, 2 * H), dtype=dtype)
    rh_a = np.empty((B, H), dtype=dtype)
    gn_a = np.empty((B, H), dtype=dtype)
    cdef real[:, :, ::1] hs = hs_a, z = z_a, r = r_a, n = n_a
    cdef real[:, ::1] g = g_a, rh = rh_a, gn = gn_a
    cdef real* hp
    cdef int t, b, i
    cdef real zz, nn
    with nogil:
        for t in range(T):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            _gemm_rm(hp, H, &U[0, 0], H3, &g[0, 0], 2 * H, B, 2 * H, H, 0.0, False)
            for b in range(B):
                for i in range(H):
                    z[t, b, i] = _sig(xproj[t, b, i] + g[b, i])
                    r[t, b, i] = _sig(xproj[t, b, H + i] + g[b, H + i])
                    rh[b, i] = r[t, b, i] * hp[b * H + i]
            _gemm_rm(&rh[0, 0], H, &U[0, 2 * H], H3, &gn[0, 0], H, B, H, H, 0.0, False)
            for b in range(B):
                for i in range(H):
                    nn = _tanh(xproj[t, b, 2 * H + i] + gn[b, i])
                    n[t, b, i] = nn
                    zz = z[t, b, i]
                    hs[t, b, i] = (1.0 - zz) * nn + zz * hp[b * H + i]
    return hs_a, z_a, r_a, n_a


def gru_backward(real[:, :, ::1] dhs, real[:, ::1] U, real[:, ::1] h0,
                 real[:, :, ::1] hs, real[:, :, ::1] z, real[:, :, ::1] r, real[:, :, ::1] n):
    cdef int T = hs.shape[0], B = hs.shape[1], H = hs.shape[2]
    cdef int H3 = 3 * H
    dtype = np.float32 if real is float else np.float64
    da_a = np.empty((T, B, H3), dtype=dtype)
    dh_a = np.zeros((B, H), dtype=dtype)
    dnext_a = np.empty((B, H), dtype=dtype)
    drh_a = np.empty((B, H), dtype=dtype)
    cdef real[:, :, ::1] da = da_a
    cdef real[:, ::1] dh = dh_a, dnext = dnext_a, drh = drh_a
    cdef real* hp
    cdef int t, b, i
    cdef real d, zz, nn, rr, hv
    with nogil:
        for t in range(T - 1, -1, -1):
            hp = &h0[0, 0] if t == 0 else &hs[t - 1, 0, 0]
            for b in range(B):
                for i in range(H):
                    d = dh[b, i] + dhs[t, b, i]
                    dh[b, i] = d
                    zz = z[t, b, i]
                    nn = n[t, b, i]
                    da[t, b, 2 * H + i] = d * (1.0 - zz) * (1.0 - nn * nn)
                    da[t, b, i] = d * (hp[b * H + i] - nn) * zz * (1.0 - zz)
            # drh = dan @ Un^T
            _gemm_rm(&da[t, 0, 2 * H], H3, &U[0, 2 * H], H3, &drh[0, 0], H, B, H, H, 0.0, True)
            for b in range(B):
                for i in range(H):
                    rr = r[t, b, i]
                    hv = hp[b * H + i]
                    da[t, b, H + i] = drh[b, i] * hv * rr * (1.0 - rr)
                    dnext[b, i] = dh[b, i] * z[t, b, i] + drh[b, i] * rr
            # dnext += [daz, dar] @ U_zr^T
            _gemm_rm(&da[t, 0, 0], H3, &U[0, 0], H3, &dnext[0, 0], H, B, H, 2 * H, 1.0, True)
            for b in range(B):
                for i in range(H):
                    dh[b, i] = dnext[b, i]
    return da_a, dh_a
