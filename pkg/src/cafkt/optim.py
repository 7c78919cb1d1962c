"""Adam optimizer (functional, no weight decay) and the cosine schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class AdamState:
    """Moment estimates for one parameter matrix; owned by one loop at a time."""

    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape))


def adam_step(
    param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float
) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns the new (param, state)."""
    param = np.asarray(param, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if param.shape != grad.shape or param.shape != state.first_moment.shape:
        raise DimensionError(
            f"param {param.shape}, grad {grad.shape}, moments "
            f"{state.first_moment.shape} must share one shape"
        )
    t = state.step_count + 1
    m = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
    v = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1**t)
    v_hat = v / (1.0 - state.beta2**t)
    new_param = param - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m, v, t, state.beta1, state.beta2, state.eps)
    return new_param, new_state


def cosine_lr(r: int, total: int, lr_max: float) -> float:
    """lr_max * cos^2(pi r / (2 total)): lr_max at r=0, 0 at r=total.

    Equivalent to the usual half-cosine (1 + cos(pi r/total))/2 shape.
    """
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    if r < 0 or r > total:
        raise ValueError(f"step {r} outside [0, {total}]")
    return float(lr_max) * float(np.cos(np.pi * r / (2.0 * total)) ** 2)
