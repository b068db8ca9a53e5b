"""Adam with bias-corrected moments and optional per-epoch exponential decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 1.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.decay ** epoch


def adam_step(params: dict, grads: dict, state: AdamState, epoch: int = 0):
    """Update ``params`` in place and return ``(params, state)``.

    Raises :class:`NumericError` naming the offending tensor if any gradient
    is non-finite; nothing is modified in that case.
    """
    for name in params:
        if name not in grads:
            raise ConfigurationError(f"no gradient for parameter {name}")
        g = grads[name]
        if np.shape(g) != np.shape(params[name]):
            raise ConfigurationError(f"gradient for {name} has shape {np.shape(g)}, want {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.isfinite(g).sum())
            raise NumericError(f"non-finite gradient in {name}: {bad} of {np.size(g)} entries at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    lr = state.lr_at(epoch)
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
