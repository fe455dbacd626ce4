"""Minimal reverse-mode autodiff over float64 numpy arrays.

Just enough machinery for the map decoder and its losses: elementwise
arithmetic with broadcasting, matmul, softmax, reductions, shape ops and
indexing. Gradients accumulate into ``Tensor.grad`` buffers on ``backward()``.
Everything runs in double precision so finite-difference checks are tight.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph wrapping a float64 ndarray."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._bward: Callable[[np.ndarray], None] | None = None
        self.name = name

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _node(data: np.ndarray, parents: Sequence["Tensor"],
              bward: Callable[[np.ndarray], None]) -> "Tensor":
        """Create an interior node; constant-folds when no parent needs grad."""
        out = Tensor(data)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._bward = bward
        return out

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
            if self.grad.shape != self.data.shape:
                self.grad = np.broadcast_to(grad, self.data.shape).astype(
                    np.float64)
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    # -- introspection -------------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad}{tag})"

    # -- arithmetic -----------------------------------------------------------

    @staticmethod
    def as_tensor(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    def __add__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data + other.data

        def bward(g):
            if self.requires_grad:
                self.accumulate(_unbroadcast(g, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(g, other.data.shape))

        return Tensor._node(out_data, (self, other), bward)

    __radd__ = __add__

    def __neg__(self):
        def bward(g):
            self.accumulate(-g)

        return Tensor._node(-self.data, (self,), bward)

    def __sub__(self, other):
        return self + (-Tensor.as_tensor(other))

    def __rsub__(self, other):
        return Tensor.as_tensor(other) + (-self)

    def __mul__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data * other.data

        def bward(g):
            if self.requires_grad:
                self.accumulate(_unbroadcast(g * other.data, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(g * self.data, other.data.shape))

        return Tensor._node(out_data, (self, other), bward)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data / other.data

        def bward(g):
            if self.requires_grad:
                self.accumulate(_unbroadcast(g / other.data, self.data.shape))
            if other.requires_grad:
                other.accumulate(_unbroadcast(
                    -g * self.data / (other.data ** 2), other.data.shape))

        return Tensor._node(out_data, (self, other), bward)

    def __rtruediv__(self, other):
        return Tensor.as_tensor(other) / self

    def __pow__(self, p: float):
        out_data = self.data ** p

        def bward(g):
            self.accumulate(g * p * self.data ** (p - 1))

        return Tensor._node(out_data, (self,), bward)

    def __matmul__(self, other):
        other = Tensor.as_tensor(other)
        out_data = self.data @ other.data

        def bward(g):
            if self.requires_grad:
                self.accumulate(g @ np.swapaxes(other.data, -1, -2))
            if other.requires_grad:
                if self.data.ndim > 2 and other.data.ndim == 2:
                    a2 = self.data.reshape(-1, self.data.shape[-1])
                    g2 = g.reshape(-1, g.shape[-1])
                    other.accumulate(a2.T @ g2)
                else:
                    other.accumulate(np.swapaxes(self.data, -1, -2) @ g)

        return Tensor._node(out_data, (self, other), bward)

    # -- elementwise functions -------------------------------------------------

    def exp(self):
        out_data = np.exp(self.data)

        def bward(g):
            self.accumulate(g * out_data)

        return Tensor._node(out_data, (self,), bward)

    def log(self):
        out_data = np.log(self.data)

        def bward(g):
            self.accumulate(g / self.data)

        return Tensor._node(out_data, (self,), bward)

    def sigmoid(self):
        out_data = expit(self.data)

        def bward(g):
            self.accumulate(g * out_data * (1.0 - out_data))

        return Tensor._node(out_data, (self,), bward)

    def relu(self):
        mask = self.data > 0.0

        def bward(g):
            self.accumulate(g * mask)

        return Tensor._node(np.where(mask, self.data, 0.0), (self,), bward)

    def abs(self):
        sign = np.sign(self.data)

        def bward(g):
            self.accumulate(g * sign)

        return Tensor._node(np.abs(self.data), (self,), bward)

    def maximum(self, floor: float):
        """Elementwise max with a constant; gradient passes where self wins."""
        mask = self.data >= floor

        def bward(g):
            self.accumulate(g * mask)

        return Tensor._node(np.maximum(self.data, floor), (self,), bward)

    def clip(self, lo, hi):
        """Clamp into [lo, hi]; zero gradient where the clamp is active."""
        mask = (self.data >= lo) & (self.data <= hi)

        def bward(g):
            self.accumulate(g * mask)

        return Tensor._node(np.clip(self.data, lo, hi), (self,), bward)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bward(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            self.accumulate(np.broadcast_to(gg, self.data.shape).copy())

        return Tensor._node(out_data, (self,), bward)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.data.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) / float(count)

    def softmax(self, axis: int = -1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bward(g):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            self.accumulate(out_data * (g - dot))

        return Tensor._node(out_data, (self,), bward)

    # -- shape ops --------------------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out_data = self.data.reshape(shape)
        src_shape = self.data.shape

        def bward(g):
            self.accumulate(g.reshape(src_shape))

        return Tensor._node(out_data, (self,), bward)

    def transpose(self, *axes):
        axes = axes or tuple(reversed(range(self.data.ndim)))
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inv = np.argsort(axes)

        def bward(g):
            self.accumulate(g.transpose(inv))

        return Tensor._node(self.data.transpose(axes), (self,), bward)

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bward(g):
            buf = np.zeros_like(self.data)
            np.add.at(buf, idx, g)
            self.accumulate(buf)

        return Tensor._node(out_data, (self,), bward)

    # -- autodiff -----------------------------------------------------------------

    def backward(self, grad: np.ndarray | None = None) -> None:
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no grad")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self.accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(topo):
            if node._bward is not None and node.grad is not None:
                node._bward(node.grad)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t.accumulate(g[tuple(sl)])

    return Tensor._node(out_data, tensors, bward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor.as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bward(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t.accumulate(np.take(g, i, axis=axis))

    return Tensor._node(out_data, tensors, bward)


def parameters_vector(params: Iterable[Tensor]) -> np.ndarray:
    """Flatten parameter values into one vector (for checkpoints/tests)."""
    return np.concatenate([p.data.ravel() for p in params])


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()
