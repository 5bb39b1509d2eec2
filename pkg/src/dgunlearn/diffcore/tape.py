"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records every primitive applied to tensors that require
gradients while the tape is active.  Records are appended in execution
order, which is already a topological order of the computation graph, so
``backward`` simply walks the list in reverse.

    with Tape() as tape:
        w = Tensor(np.ones((2, 2)), requires_grad=True)
        loss = ops.sum(ops.matmul(x, w))
    (dw,) = tape.backward(loss, [w])

When no tape is active the same primitives run as plain numpy code and
nothing is recorded.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_ACTIVE: list["Tape"] = []


class ShapeError(ValueError):
    pass


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __len__(self) -> int:
        return len(self.value)

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from . import ops
        return ops.matmul(other, self)

    def __pow__(self, p: int):
        from . import ops
        return ops.power(self, p)

    def __getitem__(self, key):
        from . import ops
        return ops.getitem(self, key)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Single-use record of one taped forward pass."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []
        self._used = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _ACTIVE.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, parents: tuple[Tensor, ...], fn: BackwardFn) -> None:
        if self._used:
            raise TapeError("tape already consumed by backward()")
        self._records.append((out, parents, fn))

    def backward(self, loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of scalar ``loss`` for each tensor in ``wrt``.

        Tensors the loss does not depend on get zero gradients.  A tape can
        be differentiated exactly once.
        """
        wrt = list(wrt)
        if self._used:
            raise TapeError("backward() called twice on the same tape")
        if not self._records:
            raise TapeError("backward() on an empty tape")
        if loss.value.size != 1:
            raise ShapeError(f"loss must be a scalar, got shape {loss.shape}")
        self._used = True

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        for out, parents, fn in reversed(self._records):
            g = grads.get(id(out))
            if g is None:
                continue
            for parent, pg in zip(parents, fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        self._records.clear()
        return [
            np.asarray(grads[id(t)], dtype=DTYPE).reshape(t.shape) if id(t) in grads
            else np.zeros_like(t.value)
            for t in wrt
        ]


def active_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def make_result(value: np.ndarray, parents: tuple[Tensor, ...], fn: BackwardFn) -> Tensor:
    """Wrap ``value`` and record it on the active tape when gradients flow."""
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(value, requires_grad=needs)
    if needs:
        tape.record(out, parents, fn)
    return out
