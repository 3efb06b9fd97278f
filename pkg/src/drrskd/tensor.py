"""Dense float64 tensors and trainable parameters.

Tensors are plain row-major ``numpy.ndarray`` objects of dtype float64; the
functions here add the checked arithmetic the network core relies on.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, NumericError, ShapeError

Tensor = np.ndarray

_ELEMENTWISE = ("add", "sub", "mul", "div", "scale", "exp", "log", "max0")
_REDUCTIONS = ("sum", "mean", "argmax")


def as_tensor(values, shape=None) -> Tensor:
    """Copy ``values`` into a fresh C-contiguous float64 array."""
    t = np.array(values, dtype=np.float64, order="C", copy=True)
    if shape is not None:
        shape = tuple(shape)
        if int(np.prod(shape)) != t.size:
            raise ShapeError(f"cannot view {t.size} values as shape {shape}")
        t = t.reshape(shape)
    if any(d < 1 for d in t.shape):
        raise ShapeError(f"tensor extents must be positive, got {t.shape}")
    return t


def _check_finite(out: Tensor, op: str) -> Tensor:
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{op} produced non-finite values")
    return out


def elementwise(op: str, a, b=None) -> Tensor:
    """Apply ``op`` elementwise. ``b`` is a same-shaped tensor or a scalar.

    Unary ops (exp, log, max0) ignore ``b``.
    """
    if op not in _ELEMENTWISE:
        raise ValueError(f"unknown elementwise op {op!r}")
    a = np.asarray(a, dtype=np.float64)
    if op in ("exp", "log", "max0"):
        if op == "log":
            if np.any(a <= 0):
                raise DomainError("log of non-positive value")
            return np.log(a)
        if op == "exp":
            with np.errstate(over="ignore"):
                return _check_finite(np.exp(a), op)
        return np.maximum(a, 0.0)

    if b is None:
        raise ValueError(f"{op} needs a second operand")
    b = np.asarray(b, dtype=np.float64)
    if b.ndim != 0 and b.shape != a.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")
    if op == "scale" and b.ndim != 0:
        raise ShapeError("scale takes a scalar factor")
    if op == "div" and np.any(b == 0):
        raise DomainError("division by zero")
    with np.errstate(over="ignore"):
        if op == "add":
            out = a + b
        elif op == "sub":
            out = a - b
        elif op in ("mul", "scale"):
            out = a * b
        else:
            out = a / b
    return _check_finite(np.broadcast_to(out, a.shape).copy(), op)


def matmul(a, b) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError("matmul expects two matrices")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def reduce(op: str, t, axis: int | None = None):
    """Sum, mean or argmax over ``axis`` (whole tensor when None).

    ``argmax`` returns the lowest index among ties, as an int for a full
    reduction and an integer array otherwise.
    """
    if op not in _REDUCTIONS:
        raise ValueError(f"unknown reduction {op!r}")
    t = np.asarray(t, dtype=np.float64)
    if t.size == 0:
        raise DomainError("reduction over an empty tensor")
    if axis is not None and not 0 <= axis < t.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {t.ndim}")
    if op == "sum":
        return t.sum(axis=axis)
    if op == "mean":
        return t.mean(axis=axis)
    # np.argmax already returns the first occurrence of the maximum
    if axis is None:
        return int(np.argmax(t))
    return np.argmax(t, axis=axis)


@dataclass
class Parameter:
    value: Tensor
    grad: Tensor = field(init=False)
    name: str = ""

    def __post_init__(self):
        self.value = as_tensor(self.value)
        self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def accumulate(self, g: Tensor):
        if g.shape != self.value.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.value.shape}")
        self.grad += g
