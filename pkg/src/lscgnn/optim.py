"""Adam optimizer over autodiff tensors, full batch, deterministic."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class AdamState:
    """First/second moment buffers plus step count for a fixed parameter list."""

    def __init__(self, params: list[Tensor], lr: float = 0.005,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]


def adam_step(params: list[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; zeroes grads afterwards.

    Every parameter must carry a gradient (run backward first).
    """
    if len(params) != len(state.params):
        raise ValueError(f"adam_step got {len(params)} params, state holds {len(state.params)}")
    for i, p in enumerate(params):
        if p is not state.params[i]:
            raise ValueError(f"adam_step param {i} does not match the optimizer state")
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {i} has no gradient; call backward first")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        p.grad = None
