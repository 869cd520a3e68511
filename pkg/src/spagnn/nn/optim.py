from __future__ import annotations

import numpy as np

from .params import ParamStore

__all__ = ["adam_step"]


def adam_step(store: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update over every parameter, then clear gradients."""
    grads = store.grads()
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    store.step += 1
    t = store.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, param in store.items():
        g = grads[name]
        m = store.m[name] = beta1 * store.m[name] + (1.0 - beta1) * g
        v = store.v[name] = beta2 * store.v[name] + (1.0 - beta2) * g * g
        param.data = param.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)
    store.zero_grad()
