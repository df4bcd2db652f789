from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteGradient, ShapeMismatch


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(w, grads: dict, state: AdamState, lr: float):
    """Bias-corrected Adam update, applied to ``w`` in place.

    Moments are kept in float64 whatever the weight dtype.  Returns
    ``(w, state)``.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        param = w.tensors[name]
        if g.shape != param.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, parameter {param.shape}")
        g = np.asarray(g, dtype=np.float64)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros(param.shape)
            state.v[name] = np.zeros(param.shape)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        w.tensors[name] = (param - update).astype(param.dtype)
    w.version += 1
    return w, state
