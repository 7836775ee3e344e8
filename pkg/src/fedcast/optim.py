"""Adam with per-parameter-name state, so state can outlive tensor copies."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def step(self, named_params, grads: dict, state: AdamState) -> None:
        """Update tensors in place. `named_params` is (name, Tensor) pairs;
        parameters without a gradient entry are skipped."""
        state.step += 1
        t = state.step
        correct1 = 1.0 - self.beta1 ** t
        correct2 = 1.0 - self.beta2 ** t
        for name, param in named_params:
            g = grads.get(param)
            if g is None:
                continue
            m = state.m.get(name)
            v = state.v.get(name)
            if m is None:
                m = np.zeros_like(param.data)
                v = np.zeros_like(param.data)
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            state.m[name] = m
            state.v[name] = v
            mhat = m / correct1
            vhat = v / correct2
            param.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
