"""Minimal reverse-mode differentiation over float64 numpy arrays."""

from . import ops
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .ops import forward_primitive
from .optim import (
    Adam,
    AdamState,
    NonFiniteGradientError,
    adam_step,
    clip_grad_norm,
    clip_grad_value,
    global_norm,
)
from .tensor import Node, ShapeError, Tensor, backward

__all__ = [
    "Adam",
    "AdamState",
    "Node",
    "NonFiniteGradientError",
    "ShapeError",
    "Tensor",
    "adam_step",
    "backward",
    "check_gradients",
    "clip_grad_norm",
    "clip_grad_value",
    "forward_primitive",
    "global_norm",
    "numerical_gradient",
    "ops",
    "relative_error",
]
