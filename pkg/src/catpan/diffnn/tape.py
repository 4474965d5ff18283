"""Values, parameters and the recording tape for reverse-mode gradients."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..errors import ShapeError, ValidationError

_local = threading.local()


class Var:
    """A float64 value that may carry a gradient path back to parameters."""

    __slots__ = ("value", "requires_grad", "__weakref__")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.shape}, requires_grad={self.requires_grad})"


class Param(Var):
    """Named parameter tensor with a gradient accumulator.

    ``value`` keeps the dtype it was created with (float32 for stored
    models, float64 for gradient checks); ops upcast on use.
    """

    __slots__ = ("name", "grad", "trainable")

    def __init__(self, name: str, value, trainable: bool = True):
        arr = np.array(value, copy=True)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.name = name
        self.value = arr
        self.grad = np.zeros(arr.shape, dtype=np.float64)
        self.trainable = trainable
        self.requires_grad = trainable

    def set_trainable(self, flag: bool) -> None:
        self.trainable = flag
        self.requires_grad = flag

    def zero_grad(self) -> None:
        self.grad = np.zeros(self.value.shape, dtype=np.float64)

    def f64(self) -> np.ndarray:
        return np.asarray(self.value, dtype=np.float64)

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.shape}, trainable={self.trainable})"


@dataclass
class Record:
    out: Var
    inputs: tuple
    vjp: Callable[[np.ndarray], Sequence]
    op: str


class Tape:
    """Ordered log of traced ops; use as a context manager.

    Only ops whose inputs include something that ``requires_grad`` are
    recorded, so constant sub-graphs (frozen feature extraction, fixed
    blur targets) cost nothing at backward time.
    """

    def __init__(self):
        self.records: list[Record] = []
        self._ids: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, out: Var, inputs: tuple, vjp, op: str) -> None:
        self.records.append(Record(out, inputs, vjp, op))
        self._ids.add(id(out))

    def backward(self, loss: Var) -> None:
        backward(loss, tape=self)


def active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(loss: Var, tape: Tape | None = None) -> None:
    """Accumulate d(loss)/d(param) into ``grad`` of every reachable trainable Param."""
    tape = tape or active_tape()
    if not isinstance(loss, Var) or loss.value.size != 1:
        raise ShapeError("backward needs a scalar Var")
    if tape is None or id(loss) not in tape._ids:
        raise ValidationError("loss was not produced under this tape")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.pop(id(rec.out), None)
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not isinstance(inp, Var) or not inp.requires_grad:
                continue
            if isinstance(inp, Param):
                inp.grad = inp.grad + gi
            else:
                key = id(inp)
                grads[key] = grads[key] + gi if key in grads else gi


def zero_grads(params) -> None:
    for p in _iter_params(params):
        p.zero_grad()


def _iter_params(params):
    if isinstance(params, dict):
        return params.values()
    return params
