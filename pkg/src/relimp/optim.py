from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, names=None) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place.

    Only ``names`` (default: every key of ``grads``) are updated; moment
    buffers are created lazily with the parameter's shape.
    """
    names = list(grads) if names is None else list(names)
    for name in names:
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ValueError(f"adam_step: {name} has shape {p.shape} but gradient {g.shape}")
        if name in state.m and state.m[name].shape != p.shape:
            raise ValueError(f"adam_step: moment shape mismatch for {name}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name in names:
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
