"""Adam с классическим L2 weight decay."""

from __future__ import annotations

from typing import Dict, Mapping, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .autodiff import Gradient, ShapeMismatchError


class AdamState(BaseModel):
    """Моменты Adam по каждому параметру и счетчик шагов."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    learning_rate: float = Field(1e-4, gt=0)
    beta1: float = Field(0.5, ge=0, lt=1)
    beta2: float = Field(0.9, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    t: int = Field(0, ge=0)
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    u: Dict[str, np.ndarray] = Field(default_factory=dict)


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Gradient,
    decay: Union[float, Mapping[str, float]] = 0.0
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """Один шаг Adam спуска по градиенту; возвращает новые параметры и состояние.

    g' = g + decay·θ; m ← β1·m + (1−β1)·g'; u ← β2·u + (1−β2)·g'²;
    θ ← θ − α·m̂/(√û + ε) с поправкой смещения m̂ = m/(1−β1^t), û = u/(1−β2^t).
    """
    grads.check_congruent(params)
    t = state.t + 1
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t

    new_params: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_u: Dict[str, np.ndarray] = {}

    for name, theta in params.items():
        theta = np.asarray(theta, dtype=np.float64)
        rate = decay.get(name, 0.0) if isinstance(decay, Mapping) else decay
        if rate < 0:
            raise ValueError(f"weight decay должен быть неотрицательным: {rate}")

        g = grads[name] + rate * theta
        m_prev = state.m.get(name, np.zeros_like(theta))
        u_prev = state.u.get(name, np.zeros_like(theta))
        if m_prev.shape != theta.shape or u_prev.shape != theta.shape:
            raise ShapeMismatchError(f"моменты '{name}' не совпадают по форме с параметром")

        m = state.beta1 * m_prev + (1.0 - state.beta1) * g
        u = state.beta2 * u_prev + (1.0 - state.beta2) * (g * g)
        m_hat = m / bias1
        u_hat = u / bias2

        new_params[name] = theta - state.learning_rate * m_hat / (np.sqrt(u_hat) + state.eps)
        new_m[name] = m
        new_u[name] = u

    new_state = state.model_copy(update={"t": t, "m": new_m, "u": new_u})
    return new_params, new_state
