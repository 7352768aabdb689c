"""Reverse-mode differentiable tensors backed by float64 numpy arrays.

Only tensors created with ``requires_grad=True`` (or derived from one) record
history, so plain inference builds no graph at all.
"""

from __future__ import annotations

import itertools
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

ArrayLike = Union[np.ndarray, float, int, Sequence]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_node_ids = itertools.count()


class Tensor:
    """A float64 array plus the bookkeeping reverse-mode AD needs.

    ``grad`` is filled by :func:`backward`. Repeated backward calls add into
    ``grad``; callers reset it with :meth:`zero_grad`.
    """

    __array_ufunc__ = None  # numpy defers binary ops with Tensors to the Tensor side

    def __init__(
        self,
        data: ArrayLike,
        requires_grad: bool = False,
        _parents: Tuple["Tensor", ...] = (),
        _backward: Optional[BackwardFn] = None,
    ) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents
        self._backward = _backward
        self.node_id = next(_node_ids)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar, used mostly by the losses
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __pow__(self, exponent: float): return power(self, exponent)

    def sum(self, axis=None) -> "Tensor":
        return tsum(self, axis)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x: Union[Tensor, ArrayLike]) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: BackwardFn) -> Tensor:
    """Wrap an op result; history is attached only if some parent requires grad."""
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward_fn)
    return Tensor(data)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in seen:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor in ``loss``'s history that requires grad."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")
    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg


# ---------------------------------------------------------------- elementwise

def add(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    out = x.data + y.data

    def _back(g):
        return _unbroadcast(g, x.shape), _unbroadcast(g, y.shape)

    return make_result(out, (x, y), _back)


def sub(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)

    def _back(g):
        return _unbroadcast(g, x.shape), _unbroadcast(-g, y.shape)

    return make_result(x.data - y.data, (x, y), _back)


def mul(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)

    def _back(g):
        return _unbroadcast(g * y.data, x.shape), _unbroadcast(g * x.data, y.shape)

    return make_result(x.data * y.data, (x, y), _back)


def div(x, y) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)

    def _back(g):
        gx = g / y.data
        gy = -g * x.data / (y.data * y.data)
        return _unbroadcast(gx, x.shape), _unbroadcast(gy, y.shape)

    return make_result(x.data / y.data, (x, y), _back)


def power(x: Tensor, exponent: float) -> Tensor:
    """``x ** exponent`` for a constant real exponent (x > 0 for non-integers)."""
    exponent = float(exponent)
    out = np.power(x.data, exponent)

    def _back(g):
        if exponent == 0.0:
            return (np.zeros_like(x.data),)
        return (g * exponent * np.power(x.data, exponent - 1.0),)

    return make_result(out, (x,), _back)


def log(x: Tensor) -> Tensor:
    def _back(g):
        return (g / x.data,)

    return make_result(np.log(x.data), (x,), _back)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    out = np.clip(x.data, lo, hi)

    def _back(g):
        inside = (x.data >= lo) & (x.data <= hi)
        return (g * inside,)

    return make_result(out, (x,), _back)


def tsum(x: Tensor, axis=None) -> Tensor:
    out = x.data.sum(axis=axis)

    def _back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(a % x.ndim for a in axes)
        g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(out, (x,), _back)


def mean(x: Tensor, axis=None) -> Tensor:
    s = tsum(x, axis)
    count = x.data.size / max(s.data.size, 1)
    return mul(s, 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)

    def _back(g):
        return (g.reshape(x.shape),)

    return make_result(out, (x,), _back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D matrix product."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape[1]} vs {b.shape[0]}")

    def _back(g):
        return g @ b.data.T, a.data.T @ g

    return make_result(a.data @ b.data, (a, b), _back)
