"""Frame-level BCE and asymmetric focal loss, each returning ``(loss, dL/dp)``.

The asymmetric focal loss used here is

    -[(1 - p)**gamma * y * log(p) + p**zeta * (1 - y) * log(1 - p)]

averaged over the unmasked cells.  ``gamma`` down-weights easy active cells,
``zeta`` down-weights easy inactive cells; at ``gamma = zeta = 0`` it is BCE.
"""
from __future__ import annotations

import numpy as np

from ..errors import NegativeExponent, ShapeMismatch

P_MIN, P_MAX = 1e-7, 1.0 - 1e-7


def _prepare(p, y, mask):
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ShapeMismatch(f"posteriors {p.shape} and targets {y.shape} differ")
    if mask is None:
        weight = np.ones_like(p)
    else:
        try:
            weight = np.broadcast_to(np.asarray(mask, dtype=np.float64), p.shape)
        except ValueError:
            raise ShapeMismatch(f"mask {np.shape(mask)} does not broadcast to {p.shape}") from None
    return np.clip(p, P_MIN, P_MAX), y, weight


def _reduce(cell_loss, cell_grad, weight):
    total = weight.sum()
    if total == 0:
        # a fully masked window contributes nothing
        return 0.0, np.zeros_like(cell_loss)
    return float((cell_loss * weight).sum() / total), cell_grad * weight / total


def bce_loss(p, y, mask=None):
    """Mean binary cross-entropy over the cells where ``mask`` is 1.

    ``mask`` may be any shape that broadcasts to ``p``: ``(N, 1)`` masks
    frames, ``(M,)`` masks class columns.  The gradient is taken at the
    clipped probability.
    """
    pc, y, weight = _prepare(p, y, mask)
    cell = -(y * np.log(pc) + (1.0 - y) * np.log1p(-pc))
    grad = -(y / pc) + (1.0 - y) / (1.0 - pc)
    return _reduce(cell, grad, weight)


def afl_loss(p, y, gamma=0.0625, zeta=1.0, mask=None):
    if gamma < 0 or zeta < 0:
        raise NegativeExponent(f"gamma and zeta must be >= 0, got {gamma}, {zeta}")
    pc, y, weight = _prepare(p, y, mask)
    log_p, log_q = np.log(pc), np.log1p(-pc)
    q = 1.0 - pc
    pos_w, neg_w = q ** gamma, pc ** zeta
    cell = -(pos_w * y * log_p + neg_w * (1.0 - y) * log_q)
    d_pos = pos_w / pc
    if gamma:
        d_pos = d_pos - gamma * q ** (gamma - 1.0) * log_p
    d_neg = -neg_w / q
    if zeta:
        d_neg = d_neg + zeta * pc ** (zeta - 1.0) * log_q
    grad = -(y * d_pos + (1.0 - y) * d_neg)
    return _reduce(cell, grad, weight)


def make_loss(name: str, gamma: float = 0.0625, zeta: float = 1.0):
    if name == "bce":
        return lambda p, y, mask=None: bce_loss(p, y, mask)
    if name == "afl":
        return lambda p, y, mask=None: afl_loss(p, y, gamma, zeta, mask)
    raise ValueError(f"unknown loss {name!r}")
