"""Differentiable primitives.

Every function accepts tensors or plain arrays and returns a Tensor.
Broadcasting follows numpy; gradients are summed back to the operand
shape.
"""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .tape import DTYPE, ShapeError, Tensor, as_tensor, make_result

_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715
LN_EPS = 1e-5


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return make_result(
        a.value + b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return make_result(
        a.value - b.value, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return make_result(
        a.value * b.value, (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def power(a, p: int) -> Tensor:
    a = as_tensor(a)
    if p == 1:
        return a
    return make_result(a.value ** p, (a,), lambda g: (g * p * a.value ** (p - 1),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return make_result(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),))


def matmul(a, b) -> Tensor:
    """Batched matrix product; both operands need at least two dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result(a.value @ b.value, (a, b), back)


def linear(x, w, b=None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x``; ``w`` is (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    if x.ndim == 1:
        x = reshape(x, (1, -1))
        out = matmul(x, w)
        out = reshape(out, (w.shape[1],))
    else:
        out = matmul(x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = add(out, b)
    return out


def gelu(x) -> Tensor:
    """GeLU, tanh approximation."""
    x = as_tensor(x)
    v = x.value
    v2 = v * v
    th = np.tanh(_GELU_C * v * (1.0 + _GELU_A * v2))
    out = 0.5 * v * (1.0 + th)

    def back(g):
        d = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * _GELU_C * (1.0 + 3.0 * _GELU_A * v2)
        return (g * d,)

    return make_result(out, (x,), back)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.value))
    return make_result(s, (x,), lambda g: (g * s * (1.0 - s),))


def layer_norm(x, gamma, beta, eps: float = LN_EPS) -> Tensor:
    """Normalize each row over the last axis, then a per-column affine."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm: input {x.shape} does not match affine {gamma.shape}/{beta.shape}"
        )
    mu = x.value.mean(axis=-1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.value + beta.value

    def back(g):
        lead = tuple(range(g.ndim - 1))
        dgamma = (g * xhat).sum(axis=lead)
        dbeta = g.sum(axis=lead)
        dxhat = g * gamma.value
        dx = inv * (
            dxhat
            - dxhat.mean(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True)
        )
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), back)


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    try:
        value = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError:
        shapes = ", ".join(str(p.shape) for p in parts)
        raise ShapeError(f"concat: incompatible shapes {shapes}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def back(g):
        return np.split(g, bounds, axis=axis)

    return make_result(value, tuple(parts), back)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    return make_result(x.value.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def getitem(x, key) -> Tensor:
    """Basic (non-fancy) indexing only."""
    x = as_tensor(x)

    def back(g):
        full = np.zeros_like(x.value)
        full[key] = g
        return (full,)

    return make_result(x.value[key], (x,), back)


def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    x = as_tensor(x)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(x.value.sum(axis=axis, keepdims=keepdims), (x,), back)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.value.size if axis is None else x.shape[axis]

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result(x.value.mean(axis=axis, keepdims=keepdims), (x,), back)


def mean_rows(x) -> Tensor:
    """Average over the row (second-to-last) axis."""
    return mean(x, axis=-2)


def bce_with_logits(logits, labels) -> Tensor:
    """Mean binary cross-entropy on raw logits, in the overflow-free form
    ``max(x, 0) - x*y + log1p(exp(-|x|))``."""
    logits = as_tensor(logits)
    y = np.asarray(labels, dtype=DTYPE)
    if logits.value.size == 0 or y.shape != logits.shape:
        raise ShapeError(f"bce_with_logits: logits {logits.shape} vs labels {y.shape}")
    if np.any((y < 0.0) | (y > 1.0)) or not np.all(np.isfinite(y)):
        raise ValueError("bce_with_logits: labels must lie in [0, 1]")
    x = logits.value
    per = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    n = x.size

    def back(g):
        s = 0.5 * (1.0 + np.tanh(0.5 * x))
        return (g * (s - y) / n,)

    return make_result(np.asarray(per.mean()), (logits,), back)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with integer indices (repeats allowed)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)

    def back(g):
        full = np.zeros_like(x.value)
        np.add.at(np.moveaxis(full, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (full,)

    return make_result(np.take(x.value, indices, axis=axis), (x,), back)
