"""Adam with bias correction and the poly learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numgrad import DimensionError, Tensor


@dataclass(frozen=True)
class PolySchedule:
    """``eta(i) = eta0 * (1 - i / max_steps) ** alpha_exp``."""

    eta0: float = 5e-4
    max_steps: int = 1
    alpha_exp: float = 0.9

    def __post_init__(self):
        if not self.eta0 > 0:
            raise ValueError("eta0 must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.alpha_exp > 0:
            raise ValueError("alpha_exp must be positive")


def poly_lr(i: int, sched: PolySchedule) -> float:
    if i < 0 or i > sched.max_steps:
        raise ValueError(f"step {i} outside [0, {sched.max_steps}]")
    return sched.eta0 * (1.0 - i / sched.max_steps) ** sched.alpha_exp


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def for_params(cls, params: dict[str, Tensor], **hyper) -> "AdamState":
        state = cls(**hyper)
        for name, p in params.items():
            state.first_moment[name] = np.zeros(p.shape)
            state.second_moment[name] = np.zeros(p.shape)
        return state

    def copy(self) -> "AdamState":
        return AdamState(
            self.beta1, self.beta2, self.epsilon, self.step_count,
            {k: v.copy() for k, v in self.first_moment.items()},
            {k: v.copy() for k, v in self.second_moment.items()},
        )


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              lr: float) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update. Returns new parameter tensors and state.

    Neither the input tensors nor the input state are modified.
    """
    if lr < 0:
        raise ValueError("learning rate must be >= 0")
    if set(grads) != set(params):
        raise DimensionError(f"gradient names {sorted(grads)} do not match parameters {sorted(params)}")
    b1, b2 = state.beta1, state.beta2
    t = state.step_count + 1
    new_state = AdamState(b1, b2, state.epsilon, t)
    out: dict[str, Tensor] = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: gradient {list(g.shape)} vs parameter {list(p.shape)}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = np.zeros(p.shape) if m is None else m
        v = np.zeros(p.shape) if v is None else v
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        out[name] = Tensor._wrap(p.data - lr * m_hat / (np.sqrt(v_hat) + state.epsilon),
                                 requires_grad=p.requires_grad)
        new_state.first_moment[name] = m
        new_state.second_moment[name] = v
    return out, new_state
