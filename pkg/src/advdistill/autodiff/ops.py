"""Differentiable primitives.

Every function here takes :class:`Tensor` operands, computes its forward
value with numpy, and records a :class:`Node` whose backward closure maps
the upstream gradient to input gradients.  Broadcasting is deliberately
narrow: the second operand of ``add``/``sub``/``mul`` may be a scalar or a
vector matching the last axis (the bias case), nothing more.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Node, ShapeError, Tensor


def _out(op: str, values: np.ndarray, inputs: tuple[Tensor, ...], backward, **attrs) -> Tensor:
    requires_grad = any(t.requires_grad for t in inputs)
    return Tensor(values, requires_grad=requires_grad,
                  node=Node(op, inputs, backward, attrs))


def _check_tensor(op: str, *xs) -> None:
    for x in xs:
        if not isinstance(x, Tensor):
            raise TypeError(f"{op}: expected Tensor, got {type(x).__name__}")


def _binary_mode(op: str, a: Tensor, b: Tensor) -> str:
    if a.shape == b.shape:
        return "same"
    if b.ndim == 0 or b.shape == (1,):
        return "scalar"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, mode: str, shape: tuple[int, ...]) -> np.ndarray:
    if mode == "same":
        return g
    if mode == "scalar":
        return np.full(shape, g.sum())
    return g.reshape(-1, g.shape[-1]).sum(axis=0)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor("add", a, b)
    mode = _binary_mode("add", a, b)
    rhs = b.values.reshape(()) if mode == "scalar" else b.values

    def backward(g):
        return g, _reduce_to(g, mode, b.shape)

    return _out("add", a.values + rhs, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor("sub", a, b)
    mode = _binary_mode("sub", a, b)
    rhs = b.values.reshape(()) if mode == "scalar" else b.values

    def backward(g):
        return g, -_reduce_to(g, mode, b.shape)

    return _out("sub", a.values - rhs, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise product."""
    _check_tensor("mul", a, b)
    mode = _binary_mode("mul", a, b)
    av = a.values
    bv = b.values.reshape(()) if mode == "scalar" else b.values

    def backward(g):
        ga = g * bv if a.requires_grad else None
        gb = _reduce_to(g * av, mode, b.shape) if b.requires_grad else None
        return ga, gb

    return _out("mul", av * bv, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    _check_tensor("scale", x)
    c = float(c)
    return _out("scale", x.values * c, (x,), lambda g: (g * c,), c=c)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_tensor("matmul", a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return _out("matmul", av @ bv, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    _check_tensor("transpose", x)
    if x.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-D tensor, got shape {x.shape}")
    return _out("transpose", x.values.T.copy(), (x,), lambda g: (g.T,))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    _check_tensor("reshape", x)
    try:
        values = x.values.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view shape {x.shape} as {tuple(shape)}") from None
    src = x.shape
    return _out("reshape", values.copy(), (x,), lambda g: (g.reshape(src),))


def relu(x: Tensor) -> Tensor:
    _check_tensor("relu", x)
    mask = x.values > 0
    return _out("relu", np.where(mask, x.values, 0.0), (x,), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    _check_tensor("leaky_relu", x)
    slope = np.where(x.values > 0, 1.0, alpha)
    return _out("leaky_relu", x.values * slope, (x,), lambda g: (g * slope,), alpha=alpha)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x: Tensor) -> Tensor:
    _check_tensor("sigmoid", x)
    s = _sigmoid(x.values)
    return _out("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def exp(x: Tensor) -> Tensor:
    _check_tensor("exp", x)
    e = np.exp(x.values)
    return _out("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor, floor: float | None = None) -> Tensor:
    """Natural log; with ``floor`` set, arguments below it are clamped and get zero gradient."""
    _check_tensor("log", x)
    v = x.values
    if floor is not None:
        live = v >= floor
        v = np.where(live, v, floor)
    else:
        live = None
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(v)

    def backward(g):
        gx = g / v
        return (gx if live is None else np.where(live, gx, 0.0),)

    return _out("log", out, (x,), backward, floor=floor)


def _norm_axis(op: str, x: Tensor, axis):
    if axis is None:
        return None
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for shape {x.shape}")
    return axis % x.ndim


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    _check_tensor("sum", x)
    axis = _norm_axis("sum", x, axis)
    src = x.shape

    def backward(g):
        if axis is None:
            return (np.full(src, float(g)),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _out("sum", np.asarray(x.values.sum(axis=axis)), (x,), backward, axis=axis)


def mean(x: Tensor, axis: int | None = None) -> Tensor:
    _check_tensor("mean", x)
    axis = _norm_axis("mean", x, axis)
    n = x.size if axis is None else x.shape[axis]
    if n == 0:
        raise ShapeError(f"mean: empty reduction over shape {x.shape}")
    return scale(sum(x, axis), 1.0 / n)


def _check_softmax_axis(op: str, x: Tensor, axis: int) -> int:
    if x.ndim == 0:
        raise ShapeError(f"{op}: needs at least one axis, got a scalar")
    axis = _norm_axis(op, x, axis)
    if x.shape[axis] == 0:
        raise ShapeError(f"{op}: empty axis {axis} in shape {x.shape}")
    return axis


def _log_softmax(v: np.ndarray, axis: int) -> np.ndarray:
    m = v.max(axis=axis, keepdims=True)
    shifted = v - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_tensor("softmax", x)
    axis = _check_softmax_axis("softmax", x, axis)
    p = np.exp(_log_softmax(x.values, axis))

    def backward(g):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return _out("softmax", p, (x,), backward, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    _check_tensor("log_softmax", x)
    axis = _check_softmax_axis("log_softmax", x, axis)
    out = _log_softmax(x.values, axis)
    p = np.exp(out)

    def backward(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)

    return _out("log_softmax", out, (x,), backward, axis=axis)


def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by integer ``ids``; output shape is ``ids.shape + (dim,)``."""
    _check_tensor("embedding_gather", table)
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding_gather: table must be 2-D, got shape {table.shape}")
    if ids.size and not np.issubdtype(ids.dtype, np.integer):
        raise TypeError("embedding_gather: ids must be integers")
    ids = ids.astype(np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding_gather: id outside [0, {table.shape[0]}) for table {table.shape}")
    rows = table.shape

    def backward(g):
        gt = np.zeros(rows)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, rows[1]))
        return (gt,)

    return _out("embedding_gather", table.values[ids], (table,), backward)


def mean_pool(x: Tensor, lengths) -> Tensor:
    """Mean over the first ``lengths[b]`` positions of each row of a ``[B, L, d]`` tensor."""
    _check_tensor("mean_pool", x)
    lengths = np.asarray(lengths, dtype=np.int64)
    if x.ndim != 3 or lengths.shape != (x.shape[0],):
        raise ShapeError(f"mean_pool: expected [B, L, d] with B lengths, got {x.shape} and {lengths.shape}")
    if lengths.size and (lengths.min() < 1 or lengths.max() > x.shape[1]):
        raise ShapeError(f"mean_pool: lengths must lie in [1, {x.shape[1]}]")
    weights = (np.arange(x.shape[1])[None, :] < lengths[:, None]) / lengths[:, None]
    out = np.einsum("bl,bld->bd", weights, x.values)

    def backward(g):
        return (weights[:, :, None] * g[:, None, :],)

    return _out("mean_pool", out, (x,), backward)


def concatenate(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = tuple(xs)
    if not xs:
        raise ShapeError("concatenate: needs at least one tensor")
    _check_tensor("concatenate", *xs)
    try:
        out = np.concatenate([t.values for t in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concatenate: incompatible shapes {[t.shape for t in xs]}") from None
    axis = axis % out.ndim
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _out("concatenate", out, xs, backward, axis=axis)


def grad_reverse(x: Tensor, lam: float = 1.0) -> Tensor:
    """Identity forward; multiplies the backward gradient by ``-lam``."""
    _check_tensor("grad_reverse", x)
    lam = float(lam)
    return _out("grad_reverse", x.values.copy(), (x,), lambda g: (-lam * g,), lam=lam)


def detach(x: Tensor) -> Tensor:
    return x.detach()


PRIMITIVES = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "matmul": matmul,
    "transpose": transpose,
    "reshape": reshape,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "exp": exp,
    "log": log,
    "sum": sum,
    "mean": mean,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "embedding_gather": embedding_gather,
    "mean_pool": mean_pool,
    "concatenate": concatenate,
    "grad_reverse": grad_reverse,
}


def forward_primitive(op: str, *inputs: Tensor, **attrs) -> Tensor:
    """Dispatch a primitive by name."""
    try:
        fn = PRIMITIVES[op]
    except KeyError:
        raise ValueError(f"unknown primitive {op!r}") from None
    if op == "concatenate":
        return fn(inputs, **attrs)
    return fn(*inputs, **attrs)
