"""Adaptive-moment optimizer and the weight clamp used by clamped critics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NonFiniteGradient
from .nn import ParamGroup, ParamSet

Trainable = ParamSet | ParamGroup


@dataclass
class AdamState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: Trainable) -> AdamState:
    return AdamState(
        step=0,
        m=[np.zeros_like(t.value) for t in params.tensors()],
        v=[np.zeros_like(t.value) for t in params.tensors()],
    )


def adam_step(params: Trainable, grads: list[Tensor | np.ndarray], state: AdamState,
              lr: float, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, context: str = "") -> tuple[Trainable, AdamState]:
    """One in-place update; ``grads`` aligns with ``params.tensors()``.

    Raises NonFiniteGradient (with ``context`` in the message) before any
    parameter is touched if a gradient is NaN/inf.
    """
    tensors = params.tensors()
    if len(grads) != len(tensors):
        raise NonFiniteGradient(
            f"gradient count {len(grads)} != parameter count {len(tensors)} ({context})"
        )
    raw = [g.value if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64) for g in grads]
    for name, g in zip(params.names(), raw):
        if not np.isfinite(g).all():
            raise NonFiniteGradient(f"non-finite gradient for {name!r} ({context})")
    state.step += 1
    t = state.step
    for i, (p, g) in enumerate(zip(tensors, raw)):
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1**t)
        v_hat = state.v[i] / (1.0 - beta2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def clamp_params(params: ParamSet, c: float) -> ParamSet:
    """Clip every parameter entry to [-c, c] in place."""
    if c <= 0:
        raise NonFiniteGradient(f"clamp constant must be positive, got {c}")
    for t in params.tensors():
        np.clip(t.value, -c, c, out=t.value)
    return params
