from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tape import Param


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params, state: AdamState) -> None:
    """One Adam update with decoupled weight decay on trainable params.

    The decay ``p -= lr * wd * p`` is applied first, then the bias-corrected
    moment update. Gradients are left untouched; callers zero them.
    """
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    state.t += 1
    t = state.t
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for p in plist:
        if not isinstance(p, Param) or not p.trainable:
            continue
        if p.grad.shape != p.value.shape:
            raise ShapeError(f"grad shape {p.grad.shape} does not match {p.name} {p.value.shape}")
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros(p.value.shape)
            state.v[p.name] = np.zeros(p.value.shape)
        v = state.v[p.name]
        if m.shape != p.value.shape:
            raise ShapeError(f"Adam state for {p.name} has shape {m.shape}, param {p.value.shape}")
        g = p.grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        w = p.value.astype(np.float64)
        if state.weight_decay:
            w = w - state.lr * state.weight_decay * w
        w = w - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.value = w.astype(p.value.dtype)
