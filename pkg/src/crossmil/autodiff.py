"""Dense float64 tensors with reverse-mode automatic differentiation.

Everything here is sized for desk-scale models: values are computed
eagerly, each operation records its parents plus a closure that maps the
output gradient back onto them, and ``backward`` walks the recorded
graph once in reverse topological order. Broadcasting is deliberately
restricted to scalar-with-tensor and equal shapes so that shape bugs
fail loudly instead of silently fanning out.
"""

from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError

_node_ids = itertools.count()


class Tensor:
    """One node of the computation graph.

    ``data`` is always a C-contiguous float64 array. Leaf tensors created
    with ``requires_grad=True`` are the trainable parameters; operation
    results inherit ``requires_grad`` from their parents.
    """

    __slots__ = ("data", "grad", "requires_grad", "nid", "op", "_parents", "_grad_fn")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        *,
        _parents: tuple["Tensor", ...] = (),
        _grad_fn: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None,
        _op: str = "leaf",
    ):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        # a single reduction: any NaN/Inf makes the sum non-finite
        if not math.isfinite(arr.sum()):
            raise DomainError(f"non-finite values in result of '{_op}'")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.nid = next(_node_ids)
        self.op = _op
        self._parents = _parents
        self._grad_fn = _grad_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> dict[int, np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # arithmetic sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None) -> "Tensor":
        return reduce_sum(self, axis)

    def mean(self, axis: int | None = None) -> "Tensor":
        return reduce_mean(self, axis)

    def max(self, axis: int | None = None) -> "Tensor":
        return reduce_max(self, axis)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _check_binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.size == 1 or b.size == 1:
        return
    raise DimensionError(
        f"{op}: shapes {a.shape} and {b.shape} are neither equal nor scalar-broadcastable"
    )


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Undo scalar broadcasting: sum the gradient back to the operand shape."""
    if grad.shape == shape:
        return grad
    return np.full(shape, grad.sum())


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "add")

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(a.data + b.data, _parents=(a, b), _grad_fn=grad_fn, _op="add")


def sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "sub")

    def grad_fn(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(a.data - b.data, _parents=(a, b), _grad_fn=grad_fn, _op="sub")


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    _check_binary_shapes(a, b, "mul")

    def grad_fn(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(a.data * b.data, _parents=(a, b), _grad_fn=grad_fn, _op="mul")


def matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree for {a.shape} and {b.shape}")

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    with np.errstate(over="ignore", invalid="ignore"):
        return Tensor(a.data @ b.data, _parents=(a, b), _grad_fn=grad_fn, _op="matmul")


def transpose(x) -> Tensor:
    x = _wrap(x)
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-d tensor, got {x.shape}")

    def grad_fn(g):
        return (g.T.copy(),)

    return Tensor(x.data.T.copy(), _parents=(x,), _grad_fn=grad_fn, _op="transpose")


def tanh(x) -> Tensor:
    x = _wrap(x)
    y = np.tanh(x.data)

    def grad_fn(g):
        return (g * (1.0 - y * y),)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="tanh")


def relu(x) -> Tensor:
    x = _wrap(x)

    def grad_fn(g):
        return (g * (x.data > 0.0),)

    return Tensor(np.maximum(x.data, 0.0), _parents=(x,), _grad_fn=grad_fn, _op="relu")


def sigmoid(x) -> Tensor:
    x = _wrap(x)
    # split on sign so neither branch exponentiates a large positive value
    pos = x.data >= 0
    y = np.empty_like(x.data)
    y[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    ez = np.exp(x.data[~pos])
    y[~pos] = ez / (1.0 + ez)

    def grad_fn(g):
        return (g * y * (1.0 - y),)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="sigmoid")


def exp(x) -> Tensor:
    x = _wrap(x)
    with np.errstate(over="ignore"):
        y = np.exp(x.data)

    def grad_fn(g):
        return (g * y,)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="exp")


def log(x) -> Tensor:
    x = _wrap(x)
    if np.any(x.data <= 0.0):
        raise DomainError("log: input has non-positive values")
    y = np.log(x.data)

    def grad_fn(g):
        return (g / x.data,)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="log")


def _check_axis(x: Tensor, axis: int, op: str) -> int:
    if not -x.data.ndim <= axis < x.data.ndim:
        raise DimensionError(f"{op}: axis {axis} invalid for shape {x.shape}")
    axis = axis % x.data.ndim
    if x.shape[axis] == 0:
        raise DimensionError(f"{op}: axis {axis} of shape {x.shape} is empty")
    return axis


def softmax(x, axis: int = 0) -> Tensor:
    x = _wrap(x)
    axis = _check_axis(x, axis, "softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * y).sum(axis=axis, keepdims=True)
        return ((g - inner) * y,)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="softmax")


def log_softmax(x, axis: int = 0) -> Tensor:
    x = _wrap(x)
    axis = _check_axis(x, axis, "log_softmax")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def grad_fn(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="log_softmax")


def _expand(g: np.ndarray, shape: tuple[int, ...], axis: int | None) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    return np.broadcast_to(np.expand_dims(g, axis), shape)


def reduce_sum(x, axis: int | None = None) -> Tensor:
    x = _wrap(x)
    if axis is not None:
        axis = _check_axis(x, axis, "sum")

    def grad_fn(g):
        return (_expand(g, x.shape, axis).copy(),)

    return Tensor(x.data.sum(axis=axis), _parents=(x,), _grad_fn=grad_fn, _op="sum")


def reduce_mean(x, axis: int | None = None) -> Tensor:
    x = _wrap(x)
    if axis is not None:
        axis = _check_axis(x, axis, "mean")
    n = x.size if axis is None else x.shape[axis]

    def grad_fn(g):
        return (_expand(g, x.shape, axis) / n,)

    return Tensor(x.data.mean(axis=axis), _parents=(x,), _grad_fn=grad_fn, _op="mean")


def reduce_max(x, axis: int | None = None) -> Tensor:
    x = _wrap(x)
    if axis is not None:
        axis = _check_axis(x, axis, "max")
    y = x.data.max(axis=axis)

    def grad_fn(g):
        # ties share the gradient equally; deterministic and FD-consistent
        mask = x.data == _expand(np.asarray(y), x.shape, axis)
        counts = mask.sum(axis=axis, keepdims=axis is not None)
        return (_expand(g, x.shape, axis) * mask / counts,)

    return Tensor(y, _parents=(x,), _grad_fn=grad_fn, _op="max")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [_wrap(t) for t in tensors]
    if not parts:
        raise ContractError("concat: need at least one tensor")
    ndim = parts[0].data.ndim
    if any(p.data.ndim != ndim for p in parts):
        raise DimensionError(f"concat: mixed ranks {[p.shape for p in parts]}")
    if not -ndim <= axis < ndim:
        raise DimensionError(f"concat: axis {axis} invalid for rank {ndim}")
    axis = axis % ndim
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(piece.copy() for piece in np.split(g, bounds, axis=axis))

    return Tensor(
        np.concatenate([p.data for p in parts], axis=axis),
        _parents=tuple(parts),
        _grad_fn=grad_fn,
        _op="concat",
    )


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse-mode sweep from a scalar loss.

    Accumulates into ``.grad`` of every node that requires a gradient and
    returns ``{node id: gradient}`` for the parameter (leaf) nodes.
    Gradients add across calls until the caller zeroes them.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.nid in seen:
            continue
        seen.add(node.nid)
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and parent.nid not in seen:
                stack.append((parent, False))

    flowing: dict[int, np.ndarray] = {loss.nid: np.ones_like(loss.data)}
    params: dict[int, np.ndarray] = {}
    for node in reversed(order):
        g = flowing.pop(node.nid, None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g if node.grad is None else node.grad + g
            if not node._parents:
                params[node.nid] = node.grad
        if node._grad_fn is not None:
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if not parent.requires_grad:
                    continue
                if parent.nid in flowing:
                    flowing[parent.nid] = flowing[parent.nid] + pg
                else:
                    flowing[parent.nid] = np.array(pg, dtype=np.float64, copy=True)
    return params


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None
