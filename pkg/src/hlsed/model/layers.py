"""Layer primitives with explicit backward passes.

Activations are channels-last: 2-D maps are ``(B, T, F, C)``, sequences are
``(B, T, C)``.  Every ``*_forward`` returns ``(y, cache)`` and the matching
``*_backward`` consumes that cache.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .. import _kernels


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# ---------------------------------------------------------------------------
# 2-D convolution, stride 1, zero "same" padding
# ---------------------------------------------------------------------------

def _im2col2d(x, k):
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    # (B, T, F, C, k, k) view -> (B, T, F, k, k, C) copy
    win = sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, k * k * x.shape[-1])


def conv2d_forward(x, kernel):
    k, _, c_in, c_out = kernel.shape
    B, T, F, _ = x.shape
    y = _im2col2d(x, k) @ kernel.reshape(k * k * c_in, c_out)
    return y.reshape(B, T, F, c_out), x


def conv2d_backward(dy, x, kernel, need_dx=True):
    """Returns ``(dx, dkernel)``; ``dx`` is None when ``need_dx`` is false.

    With stride 1 and symmetric zero padding, the input gradient is the same
    convolution applied to ``dy`` with the kernel flipped in both spatial
    axes and its channel axes swapped.
    """
    k, _, c_in, c_out = kernel.shape
    dk = (_im2col2d(x, k).T @ dy.reshape(-1, c_out)).reshape(kernel.shape)
    if not need_dx:
        return None, dk
    flipped = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
    dx, _ = conv2d_forward(dy, flipped)
    return dx, dk


# ---------------------------------------------------------------------------
# dilated 1-D convolution over time, zero "same" padding
# ---------------------------------------------------------------------------

def _im2col1d(x, k, dilation):
    B, T, C = x.shape
    p = dilation * (k // 2)
    xp = np.pad(x, ((0, 0), (p, p), (0, 0)))
    cols = np.empty((B, T, k, C), dtype=x.dtype)
    for i in range(k):
        cols[:, :, i, :] = xp[:, i * dilation:i * dilation + T, :]
    return cols.reshape(B * T, k * C)


def conv1d_forward(x, kernel, dilation):
    k, c_in, c_out = kernel.shape
    B, T, _ = x.shape
    y = _im2col1d(x, k, dilation) @ kernel.reshape(k * c_in, c_out)
    return y.reshape(B, T, c_out), x


def conv1d_backward(dy, x, kernel, dilation):
    k, c_in, c_out = kernel.shape
    dk = (_im2col1d(x, k, dilation).T @ dy.reshape(-1, c_out)).reshape(kernel.shape)
    flipped = np.ascontiguousarray(kernel[::-1].transpose(0, 2, 1))
    dx, _ = conv1d_forward(dy, flipped, dilation)
    return dx, dk


# ---------------------------------------------------------------------------
# batch normalization over every axis but the last
# ---------------------------------------------------------------------------

def batchnorm_forward(x, scale, shift, running_mean, running_var, train, momentum, eps):
    """Returns ``(y, cache, updates)``; ``updates`` holds new running stats or None.

    A batch whose per-channel population is a single value falls back to the
    running statistics, as the batch variance would be zero.
    """
    axes = tuple(range(x.ndim - 1))
    count = x.size // x.shape[-1]
    use_batch = train and count > 1
    if use_batch:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        updates = (
            momentum * running_mean + (1.0 - momentum) * mean,
            momentum * running_var + (1.0 - momentum) * var,
        )
    else:
        mean, var, updates = running_mean, running_var, None
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    y = xhat * scale + shift
    return y, (xhat, inv_std, use_batch), updates


def batchnorm_backward(dy, cache, scale):
    xhat, inv_std, use_batch = cache
    axes = tuple(range(dy.ndim - 1))
    dshift = dy.sum(axis=axes)
    dscale = (dy * xhat).sum(axis=axes)
    if use_batch:
        n = dy.size // dy.shape[-1]
        dx = (scale * inv_std / n) * (n * dy - dshift - xhat * dscale)
    else:
        dx = dy * (scale * inv_std)
    return dx, dscale, dshift


# ---------------------------------------------------------------------------
# pooling and dense
# ---------------------------------------------------------------------------

def freq_avgpool_forward(x, factor):
    B, T, F, C = x.shape
    return x.reshape(B, T, F // factor, factor, C).mean(axis=3)


def freq_avgpool_backward(dy, factor):
    return np.repeat(dy / factor, factor, axis=2)


def dense_forward(x, W, b):
    return x @ W + b


def dense_backward(dy, x, W):
    D = x.shape[-1]
    dW = x.reshape(-1, D).T @ dy.reshape(-1, dy.shape[-1])
    db = dy.reshape(-1, dy.shape[-1]).sum(axis=0)
    return dy @ W.T, dW, db


# ---------------------------------------------------------------------------
# GRU
# ---------------------------------------------------------------------------

def gru_forward(x, W, U, b, reverse=False):
    """Run one GRU direction over ``x`` of shape ``(B, T, D)``.

    Returns the hidden sequence ``(B, T, H)`` aligned with the input time axis.
    """
    B = x.shape[0]
    H = U.shape[0]
    xt = np.ascontiguousarray(x.transpose(1, 0, 2))
    if reverse:
        xt = np.ascontiguousarray(xt[::-1])
    xproj = xt @ W + b
    h0 = np.zeros((B, H), dtype=x.dtype)
    hs, z, r, n = _kernels.gru_forward(xproj, U, h0)
    out = hs[::-1] if reverse else hs
    return out.transpose(1, 0, 2), (xt, h0, hs, z, r, n, reverse)


def gru_backward(dy, cache, W, U):
    xt, h0, hs, z, r, n, reverse = cache
    H = U.shape[0]
    dhs = dy.transpose(1, 0, 2)
    if reverse:
        dhs = dhs[::-1]
    da, _ = _kernels.gru_backward(dhs, U, h0, hs, z, r, n)
    T, B, _ = hs.shape
    hprev = np.concatenate([h0[None], hs[:-1]], axis=0).reshape(T * B, H)
    da2 = da.reshape(T * B, 3 * H)
    dU = np.empty_like(U)
    dU[:, : 2 * H] = hprev.T @ da2[:, : 2 * H]
    dU[:, 2 * H:] = (r.reshape(T * B, H) * hprev).T @ da2[:, 2 * H:]
    dW = xt.reshape(T * B, -1).T @ da2
    db = da2.sum(axis=0)
    dxt = da @ W.T
    if reverse:
        dxt = dxt[::-1]
    return dxt.transpose(1, 0, 2), dW, dU, db
