"""Adam with bias correction and the step-decay learning-rate schedule."""
import math
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DimensionError, ParameterError


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, param, **hyper):
        return cls(np.zeros_like(param), np.zeros_like(param), **hyper)


def adam_step(param, grad, state, lr):
    """One Adam update; returns ``(new_param, new_state)`` without mutating inputs."""
    if param.shape != grad.shape or state.m.shape != param.shape:
        raise DimensionError(
            f"adam: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    if not lr > 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    new = AdamState(state.m.copy(), state.v.copy(), state.step,
                    state.beta1, state.beta2, state.epsilon)
    param = param.copy()
    _update(param, grad, new, lr)
    return param, new


def _update(param, grad, state, lr):
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1 - b1) * grad
    state.v *= b2
    state.v += (1 - b2) * (grad * grad)
    bc1 = 1 - b1 ** state.step
    bc2 = 1 - b2 ** state.step
    denom = np.sqrt(state.v / bc2) + state.epsilon
    param -= (lr / bc1) * state.m / denom


class Adam:
    """In-place Adam over a dict of named parameter arrays."""

    def __init__(self, params, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = params
        self.states = {k: AdamState.zeros_like(p, beta1=beta1, beta2=beta2, epsilon=epsilon)
                       for k, p in params.items()}

    def step(self, grads, lr):
        if not lr > 0:
            raise ParameterError(f"learning rate must be positive, got {lr}")
        for k, p in self.params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise DimensionError(f"adam: grad for {k} has shape {g.shape}, want {p.shape}")
            _update(p, g.astype(p.dtype, copy=False), self.states[k], lr)


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float = 1e-5
    gamma: float = 0.9
    period_epochs: int = 50

    def __post_init__(self):
        if not self.base_lr > 0:
            raise ParameterError(f"base_lr must be positive, got {self.base_lr}")
        if not 0 < self.gamma <= 1:
            raise ParameterError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.period_epochs < 1:
            raise ParameterError(f"period_epochs must be >= 1, got {self.period_epochs}")


def lr_at_epoch(schedule, epoch):
    """``base_lr * gamma ** (epoch // period_epochs)``."""
    if epoch < 0:
        raise ParameterError(f"epoch must be >= 0, got {epoch}")
    return schedule.base_lr * schedule.gamma ** (epoch // schedule.period_epochs)
