"""Adam and the two gradient clipping rules used during training."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteGradientError(FloatingPointError):
    """A gradient contained NaN or inf."""


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Mapping[str, np.ndarray]:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Parameters absent from ``grads`` are left untouched.  Raises
    :class:`NonFiniteGradientError` naming the first offending parameter
    before anything is modified.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")

    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        params[name] -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> list[np.ndarray]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = list(grads)
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    factor = max_norm / norm
    return [g * factor for g in grads]


def clip_grad_value(grads: Sequence[np.ndarray], clip: float) -> list[np.ndarray]:
    if clip <= 0:
        raise ValueError("clip must be positive")
    return [np.clip(g, -clip, clip) for g in grads]


class Adam:
    """Adam over a named set of leaf tensors.

    Call :meth:`zero_grad` between steps; gradients otherwise accumulate.
    Exactly one of ``clip_norm`` / ``clip_value`` may be set.
    """

    def __init__(self, params: Mapping[str, Tensor], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, clip_norm: float | None = None,
                 clip_value: float | None = None):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        if clip_norm is not None and clip_value is not None:
            raise ValueError("choose one of clip_norm and clip_value")
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        self.clip_norm = clip_norm
        self.clip_value = clip_value

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> float:
        """Clip, update, and return the pre-clip global gradient norm."""
        names = list(self.params)
        grads = [self.params[n].grad for n in names]
        norm = global_norm(grads)
        if self.clip_norm is not None:
            grads = clip_grad_norm(grads, self.clip_norm)
        elif self.clip_value is not None:
            grads = clip_grad_value(grads, self.clip_value)
        adam_step({n: self.params[n].values for n in names}, dict(zip(names, grads)), self.state)
        return norm
