"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numerical_gradient(fn: Callable[[], Tensor], leaf: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``fn()`` with respect to ``leaf.values``."""
    out = np.zeros_like(leaf.values)
    flat = leaf.values.reshape(-1)
    grad_flat = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn().item()
        flat[i] = orig - h
        down = fn().item()
        flat[i] = orig
        grad_flat[i] = (up - down) / (2.0 * h)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)
    return float(np.linalg.norm(a - b) / denom)


def check_gradients(fn: Callable[[], Tensor], leaves: Sequence[Tensor],
                    h: float = 1e-5) -> float:
    """Worst relative error between backward() and central differences over ``leaves``."""
    for leaf in leaves:
        leaf.zero_grad()
    fn().backward()
    analytic = [leaf.grad.copy() for leaf in leaves]
    worst = 0.0
    for leaf, ga in zip(leaves, analytic):
        gn = numerical_gradient(fn, leaf, h)
        worst = max(worst, relative_error(ga, gn))
    return worst
