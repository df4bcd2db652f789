"""CRNN and TCN forward/backward passes.

Both share the convolutional front end: ``conv_blocks`` blocks of
``convs_per_block`` x (3x3 conv -> batch norm -> ReLU) followed by 2x1
average pooling over frequency, then a mean over the remaining frequency
bins.  The CRNN runs a bidirectional GRU over the resulting sequence; the TCN
runs a stack of residual dilated temporal convolutions.  A time-distributed
dense layer with sigmoid produces one posterior per class and frame.
"""
from __future__ import annotations

import numpy as np

from ..errors import NonFiniteActivation, ShapeMismatch, StaleCache
from ..signal import LogMelSpectrogram
from . import layers as L
from .weights import ModelWeights


def _as_batch(w: ModelWeights, x):
    if isinstance(x, LogMelSpectrogram):
        x = x.values
    x = np.asarray(x)
    batched = x.ndim == 3
    if not batched:
        x = x[None]
    if x.ndim != 3:
        raise ShapeMismatch(f"expected (N, n_mels) or (B, N, n_mels) input, got shape {x.shape}")
    if x.shape[-1] != w.config.n_mels:
        raise ShapeMismatch(f"input has {x.shape[-1]} mel bins, model expects {w.config.n_mels}")
    if x.shape[1] < 1:
        raise ShapeMismatch("input has no frames")
    return np.ascontiguousarray(x, dtype=w.dtype), batched


def _frontend_forward(w, x, train, ops, updates):
    cfg, t = w.config, w.tensors
    h = x[..., None]
    for b in range(1, cfg.conv_blocks + 1):
        for l in range(1, cfg.convs_per_block + 1):
            kname, bn = f"block{b}.conv{l}.kernel", f"block{b}.bn{l}"
            y, x_in = L.conv2d_forward(h, t[kname])
            y, bn_cache, upd = L.batchnorm_forward(
                y, t[f"{bn}.scale"], t[f"{bn}.shift"], t[f"{bn}.running_mean"], t[f"{bn}.running_var"],
                train, cfg.bn_momentum, cfg.bn_epsilon,
            )
            if upd is not None:
                updates[f"{bn}.running_mean"], updates[f"{bn}.running_var"] = upd
            active = y > 0
            h = y * active
            updates["_margin"] = min(updates.get("_margin", np.inf), float(np.abs(y).min()))
            ops.append(("conv", kname, bn, x_in, bn_cache, active))
        h = L.freq_avgpool_forward(h, cfg.freq_pool)
        ops.append(("pool",))
    ops.append(("fmean", h.shape[2]))
    return h.mean(axis=2)


def _frontend_backward(w, dfeat, ops, grads):
    cfg, t = w.config, w.tensors
    _, n_freq = ops.pop()
    dh = np.repeat(dfeat[:, :, None, :] / n_freq, n_freq, axis=2)
    while ops:
        op = ops.pop()
        if op[0] == "pool":
            dh = L.freq_avgpool_backward(dh, cfg.freq_pool)
            continue
        _, kname, bn, x_in, bn_cache, active = op
        dy = dh * active
        dy, grads[f"{bn}.scale"], grads[f"{bn}.shift"] = L.batchnorm_backward(dy, bn_cache, t[f"{bn}.scale"])
        # the network input needs no gradient
        dh, grads[kname] = L.conv2d_backward(dy, x_in, t[kname], need_dx=bool(ops))
    return dh


def _crnn_body(w, feat, train, ops, updates):
    t = w.tensors
    fw, cf = L.gru_forward(feat, t["gru.fwd.W"], t["gru.fwd.U"], t["gru.fwd.b"])
    bw, cb = L.gru_forward(feat, t["gru.bwd.W"], t["gru.bwd.U"], t["gru.bwd.b"], reverse=True)
    ops.append(("bigru", feat, cf, cb))
    return np.concatenate([fw, bw], axis=-1)


def _crnn_body_backward(w, dseq, op, grads):
    t = w.tensors
    _, feat, cf, cb = op
    H = t["gru.fwd.U"].shape[0]
    dfeat = np.zeros_like(feat)
    for d, cache, part in (("fwd", cf, dseq[..., :H]), ("bwd", cb, dseq[..., H:])):
        dx, grads[f"gru.{d}.W"], grads[f"gru.{d}.U"], grads[f"gru.{d}.b"] = L.gru_backward(
            np.ascontiguousarray(part), cache, t[f"gru.{d}.W"], t[f"gru.{d}.U"]
        )
        dfeat += dx
    return dfeat


def _tcn_body(w, feat, train, ops, updates):
    cfg, t = w.config, w.tensors
    h = L.dense_forward(feat, t["tcn.in.W"], t["tcn.in.b"])
    body_ops = [("in", feat)]
    for i, dil in enumerate(cfg.dilations, start=1):
        p = f"tcn.res{i}"
        y, x_in = L.conv1d_forward(h, t[f"{p}.kernel"], dil)
        y, bn_cache, upd = L.batchnorm_forward(
            y, t[f"{p}.bn.scale"], t[f"{p}.bn.shift"], t[f"{p}.bn.running_mean"], t[f"{p}.bn.running_var"],
            train, cfg.bn_momentum, cfg.bn_epsilon,
        )
        if upd is not None:
            updates[f"{p}.bn.running_mean"], updates[f"{p}.bn.running_var"] = upd
        active = y > 0
        a = y * active
        updates["_margin"] = min(updates.get("_margin", np.inf), float(np.abs(y).min()))
        h = h + L.dense_forward(a, t[f"{p}.pw.W"], t[f"{p}.pw.b"])
        body_ops.append((p, dil, x_in, bn_cache, active, a))
    ops.append(("tcn", body_ops))
    return h


def _conv1d_grad(dy, x_in, kernel, dil, grads, name):
    dx, grads[name] = L.conv1d_backward(dy, x_in, kernel, dil)
    return dx


def _tcn_body_backward(w, dh, op, grads):
    t = w.tensors
    body_ops = op[1]
    for p, dil, x_in, bn_cache, active, a in reversed(body_ops[1:]):
        da, grads[f"{p}.pw.W"], grads[f"{p}.pw.b"] = L.dense_backward(dh, a, t[f"{p}.pw.W"])
        dy = da * active
        dy, grads[f"{p}.bn.scale"], grads[f"{p}.bn.shift"] = L.batchnorm_backward(
            dy, bn_cache, t[f"{p}.bn.scale"]
        )
        dh = dh + _conv1d_grad(dy, x_in, t[f"{p}.kernel"], dil, grads, f"{p}.kernel")
    feat = body_ops[0][1]
    dfeat, grads["tcn.in.W"], grads["tcn.in.b"] = L.dense_backward(dh, feat, t["tcn.in.W"])
    return dfeat


_BODIES = {
    "crnn": (_crnn_body, _crnn_body_backward),
    "tcn": (_tcn_body, _tcn_body_backward),
}


def forward(w: ModelWeights, x, mode: str = "eval"):
    """Frame posteriors for ``x``; returns ``(posteriors, cache)``.

    ``x`` is a :class:`LogMelSpectrogram`, an ``(N, n_mels)`` array or an
    ``(B, N, n_mels)`` batch; the output has the same leading axes with
    ``n_classes`` columns.  In ``train`` mode batch norm uses batch statistics
    and the cache carries the intermediates needed by :func:`backward` plus
    the new running statistics under ``"bn_updates"``; weights are not
    modified (see :func:`apply_bn_updates`).  ``eval`` mode returns
    ``cache=None``.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    train = mode == "train"
    xb, batched = _as_batch(w, x)
    ops, updates = [], {}
    body, _ = _BODIES[w.arch]
    feat = _frontend_forward(w, xb, train, ops, updates)
    seq = body(w, feat, train, ops, updates)
    # distance of the closest ReLU input to its kink; finite-difference checks need it
    relu_margin = updates.pop("_margin", np.inf)
    t = w.tensors
    logits = L.dense_forward(seq, t["out.W"], t["out.b"])
    p = L.sigmoid(logits)
    if not np.all(np.isfinite(p)):
        raise NonFiniteActivation("non-finite posteriors; weights have probably diverged")
    # keep posteriors inside the open interval even where float32 saturates
    tiny = np.finfo(p.dtype).eps
    p = np.clip(p, tiny, 1.0 - tiny)
    out = p if batched else p[0]
    if not train:
        return out, None
    cache = {
        "version": w.version,
        "weights_id": id(w),
        "ops": ops,
        "seq": seq,
        "p": p,
        "batched": batched,
        "bn_updates": updates,
        "relu_margin": relu_margin,
    }
    return out, cache


def backward(w: ModelWeights, cache, dp) -> dict:
    """Gradients of every learnable tensor given ``dL/dp`` for :func:`forward`'s output."""
    if cache is None:
        raise StaleCache("backward needs the cache of a train-mode forward pass")
    if cache["weights_id"] != id(w) or cache["version"] != w.version:
        raise StaleCache("weights changed since the forward pass that produced this cache")
    dp = np.asarray(dp, dtype=w.dtype)
    if not cache["batched"]:
        dp = dp[None]
    p = cache["p"]
    if dp.shape != p.shape:
        raise ShapeMismatch(f"gradient shape {dp.shape} does not match posteriors {p.shape}")
    t = w.tensors
    grads = {}
    dlogits = dp * p * (1.0 - p)
    dseq, grads["out.W"], grads["out.b"] = L.dense_backward(dlogits, cache["seq"], t["out.W"])
    ops = list(cache["ops"])
    _, body_backward = _BODIES[w.arch]
    dfeat = body_backward(w, dseq, ops.pop(), grads)
    _frontend_backward(w, dfeat, ops, grads)
    return {name: grads[name] for name in w.parameter_names()}


def apply_bn_updates(w: ModelWeights, cache):
    for name, value in cache["bn_updates"].items():
        w.tensors[name] = value.astype(w.dtype)


def crnn_forward(w, x, mode="eval"):
    if w.arch != "crnn":
        raise ShapeMismatch(f"weights are for {w.arch}, not crnn")
    return forward(w, x, mode)


def tcn_forward(w, x, mode="eval"):
    if w.arch != "tcn":
        raise ShapeMismatch(f"weights are for {w.arch}, not tcn")
    return forward(w, x, mode)
