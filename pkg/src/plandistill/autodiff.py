"""Minimal reverse-mode automatic differentiation over numpy arrays.

Each `Tensor` records the operation that produced it, so any scalar result
carries its whole computation tape. Calling `backward()` replays the tape
in reverse topological order and accumulates gradients on every upstream
tensor, parameters and inputs alike. Replaying the same tape gives
bit-identical gradients; there is no hidden randomness anywhere here.

The op set is exactly what the planner and networks need, nothing more.
Broadcasting follows numpy; backward passes reduce gradients back to the
operand shapes.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    expx = np.exp(x[~pos])
    out[~pos] = expx / (1.0 + expx)
    return out


class Tensor:
    """A numpy array plus its place in the computation tape."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    # make numpy defer mixed expressions to our __r*__ operators instead of
    # silently building object arrays
    __array_ufunc__ = None

    def __init__(self, data, parents: tuple = (), backward: Callable | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self._parents = parents
        self._backward = backward

    # -- graph plumbing -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        """A leaf tensor sharing this value; gradients stop here."""
        return Tensor(self.data)

    def backward(self) -> None:
        """Accumulate d(self)/d(node) into .grad for every upstream node."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        order: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:  # iterative DFS; tapes outgrow the recursion limit
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
        for node in order:
            node.grad = np.zeros_like(node.data)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic -----------------------------------------------------

    @staticmethod
    def _lift(other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._lift(other)

        def backward(g):
            self.grad += _unbroadcast(g, self.shape)
            other.grad += _unbroadcast(g, other.shape)

        return Tensor(self.data + other.data, (self, other), backward)

    __radd__ = __add__

    def __neg__(self):
        def backward(g):
            self.grad -= g

        return Tensor(-self.data, (self,), backward)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        other = self._lift(other)

        def backward(g):
            self.grad += _unbroadcast(g * other.data, self.shape)
            other.grad += _unbroadcast(g * self.data, other.shape)

        return Tensor(self.data * other.data, (self, other), backward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._lift(other)

        def backward(g):
            self.grad += _unbroadcast(g / other.data, self.shape)
            other.grad += _unbroadcast(-g * self.data / other.data**2, other.shape)

        return Tensor(self.data / other.data, (self, other), backward)

    def __rtruediv__(self, other):
        return self._lift(other) / self

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant exponents are supported")

        def backward(g):
            self.grad += g * exponent * self.data ** (exponent - 1)

        return Tensor(self.data**exponent, (self,), backward)

    def __matmul__(self, other):
        other = self._lift(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")

        def backward(g):
            self.grad += g @ other.data.T
            other.grad += self.data.T @ g

        return Tensor(self.data @ other.data, (self, other), backward)

    # -- elementwise nonlinearities --------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def backward(g):
            self.grad += g * out_data

        return Tensor(out_data, (self,), backward)

    def log(self):
        def backward(g):
            self.grad += g / self.data

        return Tensor(np.log(self.data), (self,), backward)

    def tanh(self):
        out_data = np.tanh(self.data)

        def backward(g):
            self.grad += g * (1.0 - out_data**2)

        return Tensor(out_data, (self,), backward)

    def softplus(self):
        """log(1 + exp(x)), computed as logaddexp(0, x) for stability."""

        def backward(g):
            self.grad += g * _sigmoid(self.data)

        return Tensor(np.logaddexp(0.0, self.data), (self,), backward)

    def clip(self, lo: float, hi: float):
        """Clamp values; gradient passes through strictly inside the bounds."""
        mask = (self.data > lo) & (self.data < hi)

        def backward(g):
            self.grad += g * mask

        return Tensor(np.clip(self.data, lo, hi), (self,), backward)

    # -- reductions and shaping ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def backward(g):
            if axis is None:
                self.grad += np.broadcast_to(g, self.shape)
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                self.grad += np.broadcast_to(gg, self.shape)

        return Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward)

    def mean(self, axis=None, keepdims: bool = False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape):
        def backward(g):
            self.grad += g.reshape(self.shape)

        return Tensor(self.data.reshape(*shape), (self,), backward)

    def __getitem__(self, key):
        parts = key if isinstance(key, tuple) else (key,)
        fancy = any(isinstance(p, (np.ndarray, list)) for p in parts)

        def backward(g):
            scatter = np.zeros_like(self.data)
            if fancy:
                np.add.at(scatter, key, g)  # duplicate indices accumulate
            else:
                scatter[key] = g  # basic indexing cannot alias
            self.grad += scatter

        return Tensor(self.data[key], (self,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    tensors = list(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            t.grad += g[tuple(index)]

    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  tuple(tensors), backward)


def gradients(output: Tensor, inputs: Iterable[Tensor]) -> list[np.ndarray]:
    """Backward from a scalar output; return a gradient per requested input."""
    output.backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]


def numerical_gradient(fn: Callable[[np.ndarray], float], x: np.ndarray,
                       eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = fn(x)
        flat[i] = orig - eps
        f_minus = fn(x)
        flat[i] = orig
        grad.ravel()[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def relative_gradient_error(analytic: np.ndarray, numeric: np.ndarray,
                            abs_floor: float = 1e-7) -> float:
    """Worst relative disagreement, with an absolute floor for near-zeros."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), abs_floor)
    return float((np.abs(analytic - numeric) / denom).max())
