"""Tensor type and the reverse-mode sweep."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives operands of incompatible shapes."""


@dataclass
class Node:
    """Provenance of a computed tensor.

    ``backward`` maps the upstream gradient (an ndarray shaped like the
    output) to one gradient per input, ``None`` where an input is
    constant.
    """

    op: str
    inputs: tuple["Tensor", ...]
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]
    attrs: dict = field(default_factory=dict)


class Tensor:
    """Dense float64 array with an attached gradient slot.

    Leaves have ``node is None``.  Gradients accumulate across calls to
    :meth:`backward` until :meth:`zero_grad` is called.
    """

    __slots__ = ("values", "requires_grad", "node", "name", "_grad")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None,
                 node: Node | None = None):
        self.values = np.array(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.node = node
        self.name = name
        self._grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    @property
    def is_leaf(self) -> bool:
        return self.node is None

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.values)
        return self._grad

    @grad.setter
    def grad(self, value) -> None:
        value = np.asarray(value, dtype=np.float64)
        if value.shape != self.values.shape:
            raise ShapeError(f"grad shape {value.shape} does not match tensor shape {self.shape}")
        self._grad = value

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.values.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.values

    def detach(self) -> "Tensor":
        return Tensor(self.values.copy(), requires_grad=False)

    def __repr__(self) -> str:
        tag = self.node.op if self.node is not None else "leaf"
        return f"Tensor(shape={self.shape}, op={tag}, requires_grad={self.requires_grad})"

    # operator sugar; the primitives live in ops
    def __add__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    def __radd__(self, other):
        from . import ops
        return ops.add(self, _lift(other))

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _lift(other))

    def __rsub__(self, other):
        from . import ops
        return ops.add(ops.scale(self, -1.0), _lift(other))

    def __mul__(self, other):
        from . import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, _lift(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, _lift(other))

    @property
    def T(self) -> "Tensor":
        from . import ops
        return ops.transpose(self)

    def backward(self, grad: np.ndarray | None = None) -> None:
        backward(self, grad)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        t, expanded = stack.pop()
        if expanded:
            order.append(t)
            continue
        if id(t) in seen:
            continue
        seen.add(id(t))
        stack.append((t, True))
        if t.node is not None:
            for parent in t.node.inputs:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))
    return order


def backward(loss: Tensor, grad: np.ndarray | None = None) -> None:
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf reachable from ``loss``."""
    if grad is None:
        if loss.values.size != 1 or loss.ndim > 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grad = np.ones_like(loss.values)
    else:
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != loss.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != output shape {loss.shape}")
    if not loss.requires_grad:
        return

    upstream: dict[int, np.ndarray] = {id(loss): grad}
    for t in reversed(_toposort(loss)):
        g = upstream.pop(id(t), None)
        if g is None:
            continue
        if t.node is None:
            if t.requires_grad:
                t._grad = g.copy() if t._grad is None else t._grad + g
            continue
        for parent, pg in zip(t.node.inputs, t.node.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            upstream[key] = pg if key not in upstream else upstream[key] + pg
