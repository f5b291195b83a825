from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import GradientError, ShapeError
from .tensor import Tensor

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor]) -> "AdamState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            step=0,
        )


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-4,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update.

    Returns fresh parameter tensors and a fresh state; the inputs are left
    untouched. Parameters without a gradient entry are updated with a zero
    gradient.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    for name, g in grads.items():
        if name not in params:
            raise GradientError(f"gradient given for unknown parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter {name!r}")

    t = state.step + 1
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.shape:
            raise ShapeError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m_prev = state.m.get(name)
        v_prev = state.v.get(name)
        if m_prev is None:
            m_prev = np.zeros_like(p.data)
            v_prev = np.zeros_like(p.data)
        m = beta1 * m_prev + (1.0 - beta1) * g
        v = beta2 * v_prev + (1.0 - beta2) * g * g
        update = lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
        new_params[name] = Tensor((p.data - update).astype(p.dtype), requires_grad=True, name=name)
        new_m[name] = m.astype(p.dtype)
        new_v[name] = v.astype(p.dtype)
    return new_params, AdamState(m=new_m, v=new_v, step=t)


def step_decay_lr(base_lr: float, epoch: int, decay_epoch: int, factor: float = 0.1) -> float:
    """Learning rate for a 0-based epoch: ``base · factor^(epoch // decay_epoch)``."""
    if decay_epoch <= 0:
        return base_lr
    return base_lr * factor ** (epoch // decay_epoch)
