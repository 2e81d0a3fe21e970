"""SGD and AdamW over dicts of parameter arrays."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimHyper:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


def init_state(kind: str, params: dict) -> dict:
    if kind == "sgd":
        return {"t": 0}
    if kind == "adamw":
        return {
            "t": 0,
            "m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()},
        }
    raise ValueError(f"unknown optimizer {kind!r}")


def optimizer_step(kind: str, params: dict, grads: dict, state: dict, hyper: OptimHyper):
    """One update. Returns new ``(params, state)``; inputs are left untouched.

    ``sgd`` is ``w - lr*g``. ``adamw`` uses bias-corrected moments and
    decoupled decay ``w * (1 - lr*wd)`` applied before the adaptive step.
    """
    for k, v in params.items():
        if grads[k].shape != v.shape:
            raise ValueError(f"gradient for {k} has shape {grads[k].shape}, expected {v.shape}")
    t = state["t"] + 1
    if kind == "sgd":
        new = {k: v - hyper.lr * grads[k] for k, v in params.items()}
        return new, {"t": t}
    if kind != "adamw":
        raise ValueError(f"unknown optimizer {kind!r}")
    b1, b2 = hyper.beta1, hyper.beta2
    m = {k: b1 * state["m"][k] + (1 - b1) * grads[k] for k in params}
    v = {k: b2 * state["v"][k] + (1 - b2) * grads[k] ** 2 for k in params}
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    new = {}
    for k, w in params.items():
        w = w * (1 - hyper.lr * hyper.weight_decay)
        new[k] = w - hyper.lr * (m[k] / c1) / (np.sqrt(v[k] / c2) + hyper.eps)
    return new, {"t": t, "m": m, "v": v}
