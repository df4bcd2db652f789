"""Central-difference gradient checks for the networks."""
import numpy as np

from hlsed.model import CrnnConfig, TcnConfig, backward, forward, init_weights

TINY_CRNN = CrnnConfig(n_mels=8, conv_blocks=1, channels=(3,), gru_hidden=4)
TINY_TCN = TcnConfig(n_mels=8, conv_blocks=1, channels=(3,), n_filters=4, dilations=(1, 2))


def random_instance(cfg, seed, n_frames=12, batch=2, jitter=0.1):
    """Float64 weights with every tensor perturbed, input and loss weights."""
    rng = np.random.default_rng(seed)
    w = init_weights(cfg, seed=seed, dtype=np.float64)
    for name in w.parameter_names():
        w.tensors[name] = w.tensors[name] + jitter * rng.standard_normal(w.tensors[name].shape)
    x = rng.standard_normal((batch, n_frames, cfg.n_mels))
    r = rng.standard_normal((batch, n_frames, cfg.n_classes))
    return w, x, r


def check(w, x, r, h=1e-5, floor=1e-8, max_entries=None, rng=None):
    """Max relative error between analytic and numeric gradients of sum(p * r).

    Returns ``(max_rel_err, relu_margin, n_checked)``.  ``relu_margin`` is the
    distance of the closest ReLU input to zero; when it is comparable to the
    perturbation a difference quotient may straddle the kink.
    """
    p, cache = forward(w, x, "train")
    grads = backward(w, cache, r)
    worst, n = 0.0, 0
    for name in w.parameter_names():
        t = w.tensors[name]
        idx = list(np.ndindex(t.shape))
        if max_entries is not None and len(idx) > max_entries:
            pick = (rng or np.random.default_rng(0)).choice(len(idx), max_entries, replace=False)
            idx = [idx[i] for i in pick]
        for i in idx:
            old = t[i]
            t[i] = old + h
            up = float((forward(w, x, "train")[0] * r).sum())
            t[i] = old - h
            down = float((forward(w, x, "train")[0] * r).sum())
            t[i] = old
            num = (up - down) / (2 * h)
            ana = float(grads[name][i])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
            n += 1
    return worst, cache["relu_margin"], n


def checked_instance(cfg, seed, min_margin=1e-3, **kw):
    """Draw instances from ``seed`` upward until no ReLU input is near its kink."""
    while True:
        w, x, r = random_instance(cfg, seed)
        _, cache = forward(w, x, "train")
        if cache["relu_margin"] > min_margin:
            return seed, check(w, x, r, **kw)
        seed += 10_000
