"""Dense tensors with a reverse-mode autodiff tape."""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not fit an operation."""
    pass


class NumericFailure(ArithmeticError):
    """Raised when a loss or gradient stops being finite."""

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message)
        self.iteration = iteration


class _Mode(threading.local):
    """Per-thread dtype and tape switch."""
    dtype = np.float32
    grad_enabled = True


_state = _Mode()


def default_dtype() -> type:
    return _state.dtype


@contextlib.contextmanager
def precision(dtype: type = np.float64) -> Iterator[None]:
    """Temporarily switch the dtype new tensors are created with."""
    previous = _state.dtype
    _state.dtype = dtype
    try:
        yield
    finally:
        _state.dtype = previous


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Build no tape inside the block (inference)."""
    previous = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = previous


Operand = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


class Tensor:
    """Immutable n-dimensional array plus the bookkeeping for backprop.

    ``data`` is row-major with the last index fastest. ``grad`` is filled by
    :meth:`backward` on leaves created with ``requires_grad=True``.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None

    # construction helpers

    @classmethod
    def zeros(cls, *dims: int) -> "Tensor":
        return cls(np.zeros(dims))

    @staticmethod
    def lift(value: Operand) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value)

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward: BackwardFn) -> "Tensor":
        """Wrap an op result, recording the tape only when something upstream is tracked."""
        out = cls(data)
        if _state.grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def dims(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(()).item())

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(dims={self.dims}{label}, requires_grad={self.requires_grad})"

    # autodiff

    def _topological_order(self) -> list:
        order, seen, stack = [], set(), [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        """Accumulate d(self)/d(leaf) into every tracked leaf's ``grad``."""
        if not self.requires_grad:
            raise RuntimeError("backward() called on a tensor that does not require grad")
        seed = np.ones_like(self.data) if grad is None else np.asarray(grad, dtype=self.data.dtype)
        pending = {id(self): seed}
        for node in reversed(self._topological_order()):
            g = pending.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, parent_grad in zip(node._parents, node._backward(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                pending[key] = parent_grad if key not in pending else pending[key] + parent_grad

    # elementwise arithmetic

    def __add__(self, other: Operand) -> "Tensor":
        other = Tensor.lift(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor.from_op(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return Tensor.from_op(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other: Operand) -> "Tensor":
        return self + (-Tensor.lift(other))

    def __rsub__(self, other: Operand) -> "Tensor":
        return Tensor.lift(other) + (-self)

    def __mul__(self, other: Operand) -> "Tensor":
        other = Tensor.lift(other)
        a, b = self.data, other.data
        return Tensor.from_op(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __getitem__(self, index) -> "Tensor":
        source_shape = self.shape

        def backward(g):
            full = np.zeros(source_shape, dtype=g.dtype)
            full[index] = g
            return (full,)

        return Tensor.from_op(self.data[index], (self,), backward)

    # activations

    def sigmoid(self) -> "Tensor":
        s = np.exp(-np.logaddexp(0.0, -self.data)).astype(self.data.dtype)
        return Tensor.from_op(s, (self,), lambda g: (g * s * (1.0 - s),))

    def tanh(self) -> "Tensor":
        t = np.tanh(self.data)
        return Tensor.from_op(t, (self,), lambda g: (g * (1.0 - t * t),))

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor.from_op(np.where(mask, self.data, 0.0), (self,), lambda g: (g * mask,))

    def sum(self) -> "Tensor":
        shape = self.shape
        return Tensor.from_op(
            np.asarray(self.data.sum(dtype=np.float64)),
            (self,),
            lambda g: (np.broadcast_to(g, shape).astype(self.data.dtype),),
        )

    def mean(self) -> "Tensor":
        return self.sum() * (1.0 / max(self.data.size, 1))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Join tensors along ``axis``; the gradient is split back by extent."""
    tensors = [Tensor.lift(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return Tensor.from_op(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, bounds, axis=axis)),
    )


def stack_sum(tensors: Sequence[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = total + t
    return total


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)
