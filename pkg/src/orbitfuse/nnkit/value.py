"""Reverse-mode automatic differentiation over numpy arrays.

A :class:`Value` wraps a float64 array, remembers the operation that produced
it and can push gradients back to its inputs. Broadcasting follows numpy; the
backward pass sums gradients over broadcast axes.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


_GRAD_ENABLED = True


class no_grad:
    """Context manager that stops graph recording (evaluation only)."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev, _GRAD_ENABLED = _GRAD_ENABLED, False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class ShapeMismatch(ValueError):
    pass


class NonScalarLoss(ValueError):
    pass


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Value:
    """Array node in a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op", "name")
    __array_priority__ = 100.0
    __array_ufunc__ = None  # make ndarray (op) Value defer to Value's reflected operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward: Callable | None = None, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.op = op
        self.name = name

    # ------------------------------------------------------------------ basics
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Value{label}(shape={self.shape}, op={self.op})"

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Value":
        return Value(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    @staticmethod
    def _make(data, parents: tuple, backward: Callable, op: str) -> "Value":
        rg = _GRAD_ENABLED and any(p.requires_grad for p in parents)
        return Value(data, requires_grad=rg, _parents=parents if rg else (),
                     _backward=backward if rg else None, op=op)

    # -------------------------------------------------------------- arithmetic
    def __add__(self, other) -> "Value":
        other = as_value(other)
        out_data = self.data + other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        return Value._make(out_data, (self, other), backward, "add")

    __radd__ = __add__

    def __sub__(self, other) -> "Value":
        other = as_value(other)
        out_data = self.data - other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g, other.shape))
        return Value._make(out_data, (self, other), backward, "sub")

    def __rsub__(self, other) -> "Value":
        return as_value(other) - self

    def __mul__(self, other) -> "Value":
        other = as_value(other)
        out_data = self.data * other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        return Value._make(out_data, (self, other), backward, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Value":
        other = as_value(other)
        out_data = self.data / other.data

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g / other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(-g * out_data / other.data, other.shape))
        return Value._make(out_data, (self, other), backward, "div")

    def __rtruediv__(self, other) -> "Value":
        return as_value(other) / self

    def __neg__(self) -> "Value":
        def backward(g):
            self._accumulate(-g)
        return Value._make(-self.data, (self,), backward, "neg")

    def __pow__(self, exponent: float) -> "Value":
        if isinstance(exponent, Value):
            raise TypeError("only constant exponents are supported")
        out_data = self.data ** exponent

        def backward(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1))
        return Value._make(out_data, (self,), backward, "pow")

    def __matmul__(self, other) -> "Value":
        return matmul(self, other)

    def __getitem__(self, index) -> "Value":
        out_data = self.data[index]

        basic = _is_basic_index(index)

        def backward(g):
            full = np.zeros_like(self.data)
            if basic:
                full[index] = g
            else:
                np.add.at(full, index, g)
            self._accumulate(full)
        return Value._make(out_data, (self,), backward, "getitem")

    # ---------------------------------------------------------------- reducers
    def sum(self, axis=None, keepdims: bool = False) -> "Value":
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))
        return Value._make(out_data, (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Value":
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape) -> "Value":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)

        def backward(g):
            self._accumulate(g.reshape(self.shape))
        return Value._make(out_data, (self,), backward, "reshape")

    # ------------------------------------------------------------ elementwise
    def relu(self) -> "Value":
        mask = self.data > 0
        out_data = np.where(mask, self.data, 0.0)

        def backward(g):
            self._accumulate(g * mask)
        return Value._make(out_data, (self,), backward, "relu")

    def sigmoid(self) -> "Value":
        out_data = _sigmoid(self.data)

        def backward(g):
            self._accumulate(g * out_data * (1.0 - out_data))
        return Value._make(out_data, (self,), backward, "sigmoid")

    def tanh(self) -> "Value":
        out_data = np.tanh(self.data)

        def backward(g):
            self._accumulate(g * (1.0 - out_data * out_data))
        return Value._make(out_data, (self,), backward, "tanh")

    def sqrt(self) -> "Value":
        out_data = np.sqrt(self.data)

        def backward(g):
            self._accumulate(g * 0.5 / out_data)
        return Value._make(out_data, (self,), backward, "sqrt")

    def exp(self) -> "Value":
        out_data = np.exp(self.data)

        def backward(g):
            self._accumulate(g * out_data)
        return Value._make(out_data, (self,), backward, "exp")

    def abs(self) -> "Value":
        sign = np.sign(self.data)

        def backward(g):
            self._accumulate(g * sign)
        return Value._make(np.abs(self.data), (self,), backward, "abs")

    def maximum(self, floor: float) -> "Value":
        """Elementwise max against a constant; the gradient goes to whichever side wins."""
        mask = self.data >= floor
        out_data = np.where(mask, self.data, floor)

        def backward(g):
            self._accumulate(g * mask)
        return Value._make(out_data, (self,), backward, "maximum")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def parameter(data, name: str | None = None) -> Value:
    return Value(np.array(data, dtype=np.float64, copy=True), requires_grad=True, name=name)


def matmul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.multiply.outer(g, b.data)
            a._accumulate(_unbroadcast(ga, a.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accumulate(_unbroadcast(gb, b.shape))
    return Value._make(out_data, (a, b), backward, "matmul")


def affine(x, weight: Value, bias: Value) -> Value:
    """``x @ weight.T + bias`` as a single graph node (weight is out x in)."""
    x = as_value(x)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeMismatch(f"input width {x.shape[-1]} != layer in-dimension {weight.shape[1]}")
    out_data = x.data @ weight.data.T + bias.data

    def backward(g):
        if x.requires_grad:
            x._accumulate(g @ weight.data)
        if weight.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            weight._accumulate(g2.T @ x.data.reshape(-1, x.shape[-1]))
        if bias.requires_grad:
            bias._accumulate(g.reshape(-1, g.shape[-1]).sum(axis=0))
    return Value._make(out_data, (x, weight, bias), backward, "affine")


def concat(items: Sequence, axis: int = -1) -> Value:
    vals = [as_value(v) for v in items]
    out_data = np.concatenate([v.data for v in vals], axis=axis)
    sizes = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def backward(g):
        for v, part in zip(vals, np.split(g, sizes, axis=axis)):
            if v.requires_grad:
                v._accumulate(part)
    return Value._make(out_data, tuple(vals), backward, "concat")


def stack(items: Sequence, axis: int = 0) -> Value:
    vals = [as_value(v) for v in items]
    out_data = np.stack([v.data for v in vals], axis=axis)

    def backward(g):
        for i, v in enumerate(vals):
            if v.requires_grad:
                v._accumulate(np.take(g, i, axis=axis))
    return Value._make(out_data, tuple(vals), backward, "stack")


def where(mask: np.ndarray, a, b) -> Value:
    """Select ``a`` where ``mask`` holds, else ``b``; the mask is a constant."""
    a, b = as_value(a), as_value(b)
    mask = np.asarray(mask, dtype=bool)
    out_data = np.where(mask, a.data, b.data)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.where(mask, g, 0.0), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.where(mask, 0.0, g), b.shape))
    return Value._make(out_data, (a, b), backward, "where")


def topological_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack_: list[tuple[Value, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    return order


def backward(loss: Value) -> None:
    """Accumulate d(loss)/d(node) into ``.grad`` of every reachable node."""
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss must be scalar, got shape {loss.shape}")
    order = topological_order(loss)
    loss._accumulate(np.ones_like(loss.data))
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
            # interior gradients are not needed once propagated
            if node._parents:
                node.grad = None


def zero_grads(params: Iterable[Value]) -> None:
    for p in params:
        p.grad = None


# --- dispatch helpers so the same numeric code runs on arrays and Values ---

def sqrt(x):
    return x.sqrt() if isinstance(x, Value) else np.sqrt(x)


def maximum(x, floor: float):
    return x.maximum(floor) if isinstance(x, Value) else np.maximum(x, floor)


def total(x, axis=None, keepdims: bool = False):
    return x.sum(axis=axis, keepdims=keepdims) if isinstance(x, Value) else x.sum(axis=axis, keepdims=keepdims)


def select(mask: np.ndarray, a, b):
    if isinstance(a, Value) or isinstance(b, Value):
        return where(mask, a, b)
    return np.where(mask, a, b)


def data_of(x) -> np.ndarray:
    return x.data if isinstance(x, Value) else np.asarray(x)
