"""Minimal reverse-mode autodiff on float64 numpy arrays.

A Tensor records its parents and a backward closure; calling
``backward()`` on a scalar runs the tape in reverse topological order.
Only the operations needed by the tracking/adaptation networks are
provided; everything is float64 so finite-difference checks are sharp.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad=False, _backward=None, _parents=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self._backward = _backward
        self._parents = _parents

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        """Constant copy that cuts the graph."""
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without gradient requires a scalar output")
            grad = np.ones_like(self.data)
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited and p.requires_grad:
                    stack.append((p, False))
        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # A dispatched interior node never needs its gradient or
                # closure again; dropping them releases forward buffers
                # captured by the closure while the tape is still running,
                # which caps peak memory on large convolutional graphs.
                node._backward = None
                node._parents = ()
                node.grad = None

    # operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return mul(self, _as_tensor(-1.0))

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, _backward=bwd, _parents=(a, b))


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, _backward=bwd, _parents=(a, b))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, _backward=bwd, _parents=(a, b))


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor(out_data, _backward=bwd, _parents=(a, b))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, _backward=bwd, _parents=(a, b))


def getitem(a, idx):
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            parts = idx if isinstance(idx, tuple) else (idx,)
            if all(isinstance(p, (int, np.integer, slice)) for p in parts):
                full[idx] += g
            else:
                np.add.at(full, idx, g)
            a._accumulate(full)

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def reshape(a, shape):
    out_data = a.data.reshape(shape)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g.reshape(a.data.shape))

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def transpose(a, axes=None):
    out_data = np.transpose(a.data, axes)

    def bwd(g):
        if a.requires_grad:
            if axes is None:
                a._accumulate(np.transpose(g))
            else:
                inv = np.argsort(axes)
                a._accumulate(np.transpose(g, inv))

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accumulate(g[tuple(sl)])

    return Tensor(out_data, _backward=bwd, _parents=tuple(tensors))


def stack(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        for i, t in enumerate(tensors):
            if t.requires_grad:
                t._accumulate(np.take(g, i, axis=axis))

    return Tensor(out_data, _backward=bwd, _parents=tuple(tensors))


def tsum(a, axis=None, keepdims=False):
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if a.requires_grad:
            if axis is None:
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            else:
                if not keepdims:
                    g = np.expand_dims(g, axis)
                a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def tmean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), _as_tensor(1.0 / n))


def exp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data)

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def log(a):
    a = _as_tensor(a)
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def sigmoid(a):
    a = _as_tensor(a)
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def relu(a):
    a = _as_tensor(a)
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(g * (a.data > 0.0))

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def clip(a, lo, hi):
    """Clamp; gradient passes through the interior, zero outside."""
    a = _as_tensor(a)
    out_data = np.clip(a.data, lo, hi)

    def bwd(g):
        if a.requires_grad:
            inside = (a.data >= lo) & (a.data <= hi)
            a._accumulate(g * inside)

    return Tensor(out_data, _backward=bwd, _parents=(a,))


def grad_reverse(a, lam):
    """Identity forward; backward multiplies the gradient by -lam."""
    a = _as_tensor(a)
    if lam < 0:
        raise ValueError("gradient reversal coefficient must be >= 0")
    out_data = a.data.copy()

    def bwd(g):
        if a.requires_grad:
            a._accumulate(-lam * g)

    return Tensor(out_data, _backward=bwd, _parents=(a,))
