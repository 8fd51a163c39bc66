"""Adam with coupled L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class AdamState:
    lr: float = 0.01
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[Tensor], state: AdamState) -> list[Tensor]:
    """One in-place Adam update; gradients are zeroed afterwards."""
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state does not match parameter list")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for k, p in enumerate(params):
        if state.m[k].shape != p.value.shape:
            raise ValueError(f"optimizer state shape {state.m[k].shape} != parameter {p.value.shape}")
        g = p.grad + state.weight_decay * p.value
        state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        new = p.value - state.lr * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + state.eps)
        if not np.all(np.isfinite(new)):
            raise NonFiniteError(f"parameter {k} became non-finite after step {state.t}")
        p.value = new
        p.zero_grad()
    return params
