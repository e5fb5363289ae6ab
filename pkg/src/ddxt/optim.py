"""Adam with bias correction, one parameter at a time."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .tensor import Tensor


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, param: Tensor, **hyper) -> AdamState:
        return cls(np.zeros_like(param.data), np.zeros_like(param.data), **hyper)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState, lr: float) -> None:
    """Update ``param.data`` and ``state`` in place."""
    if grad.shape != param.shape or state.m.shape != param.shape:
        raise DimensionError(f"adam: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if lr < 0:
        raise ParameterError(f"learning rate must be non-negative, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1**state.t)
    v_hat = state.v / (1.0 - b2**state.t)
    param.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(param.dtype, copy=False)


@dataclass
class Adam:
    """Adam over a named parameter collection."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params, lr: float) -> None:
        for name, p in params.items():
            if p.grad is None:
                continue
            state = self.states.get(name)
            if state is None:
                state = AdamState.zeros_like(p, beta1=self.beta1, beta2=self.beta2, eps=self.eps)
                self.states[name] = state
            adam_step(p, p.grad, state, lr)

    @property
    def step_count(self) -> int:
        return max((s.t for s in self.states.values()), default=0)
