"""Adam with bias correction and a step-decay learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exceptions import DivergenceError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState) -> None:
    """Apply one Adam update to ``params`` in place.

    All gradients are checked before any parameter moves, so a non-finite
    gradient leaves both ``params`` and ``state`` untouched.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {params[name].shape}")
        if not np.isfinite(g).all():
            raise DivergenceError(f"non-finite gradient for parameter {name!r} at step {state.t + 1}")

    t = state.t + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    updates = {}
    for name, g in grads.items():
        g = np.asarray(g, dtype=np.float64)
        m = state.m.get(name, 0.0) * state.beta1 + (1.0 - state.beta1) * g
        v = state.v.get(name, 0.0) * state.beta2 + (1.0 - state.beta2) * (g * g)
        step = (state.lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)
        new = params[name] - step
        if not np.isfinite(new).all() or not np.isfinite(new.astype(params[name].dtype)).all():
            raise DivergenceError(f"update for parameter {name!r} is non-finite at step {t}")
        updates[name] = (m, v, new)
    state.t = t
    for name, (m, v, new) in updates.items():
        state.m[name], state.v[name] = m, v
        params[name][...] = new


class StepDecay:
    """Multiply the learning rate by ``gamma`` at each milestone epoch."""

    def __init__(self, base_lr: float, gamma: float, milestones):
        self.base_lr = base_lr
        self.gamma = gamma
        self.milestones = sorted(int(m) for m in milestones)

    @classmethod
    def every(cls, base_lr: float, gamma: float, period: int, epochs: int) -> "StepDecay":
        return cls(base_lr, gamma, range(period, epochs, period))

    def lr_at(self, epoch: int) -> float:
        k = sum(1 for m in self.milestones if epoch >= m)
        return self.base_lr * self.gamma**k
