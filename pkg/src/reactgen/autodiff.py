"""Minimal reverse-mode differentiation over numpy arrays.

A Tensor wraps an ndarray and records enough of the computation to run one
backward pass. Only the operations the training loss needs are implemented.
The module-level helpers (exp, sigmoid, ...) dispatch on input type, so the
same model code runs on plain arrays (inference) and on Tensors (training).
"""

import numpy as np

from . import numeric


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node on the gradient tape."""

    __slots__ = ("data", "grad", "_parents", "_backward")

    # keep numpy from absorbing `ndarray <op> Tensor`; reflected ops run instead
    __array_ufunc__ = None

    def __init__(self, data, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def _acc(self, g):
        self.grad = g if self.grad is None else self.grad + g

    def backward(self):
        if self.data.size != 1:
            raise numeric.DomainError("backward() needs a scalar output")
        topo, seen, stack = [], set(), [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------

    def __add__(self, other):
        a, b = self, as_tensor(other)

        def back(g):
            a._acc(_unbroadcast(g, a.data.shape))
            b._acc(_unbroadcast(g, b.data.shape))

        return Tensor(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self):
        a = self
        return Tensor(-a.data, (a,), lambda g: a._acc(-g))

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        a, b = self, as_tensor(other)

        def back(g):
            a._acc(_unbroadcast(g * b.data, a.data.shape))
            b._acc(_unbroadcast(g * a.data, b.data.shape))

        return Tensor(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other):
        a, b = self, as_tensor(other)

        def back(g):
            a._acc(_unbroadcast(g / b.data, a.data.shape))
            b._acc(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise numeric.DomainError("only scalar exponents are supported")
        a = self
        out = Tensor(a.data ** exponent, (a,),
                     lambda g: a._acc(g * exponent * a.data ** (exponent - 1)))
        return out

    def __matmul__(self, other):
        a, b = self, as_tensor(other)
        if a.data.ndim != 2 or b.data.ndim != 2:
            raise numeric.DomainError("matmul is implemented for 2-D operands")

        def back(g):
            a._acc(g @ b.data.T)
            b._acc(a.data.T @ g)

        return Tensor(a.data @ b.data, (a, b), back)

    def __rmatmul__(self, other):
        return as_tensor(other) @ self

    # -- shape ops ----------------------------------------------------------

    @property
    def T(self):
        a = self
        if a.data.ndim != 2:
            raise numeric.DomainError(".T is implemented for 2-D tensors")
        return Tensor(a.data.T, (a,), lambda g: a._acc(g.T))

    def reshape(self, shape):
        a = self
        return Tensor(a.data.reshape(shape), (a,),
                      lambda g: a._acc(g.reshape(a.data.shape)))

    def sum(self, axis=None, keepdims=False):
        a = self

        def back(g):
            g = np.asarray(g)
            if axis is None:
                a._acc(np.broadcast_to(g, a.data.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            a._acc(np.broadcast_to(g, a.data.shape).copy())

        return Tensor(a.data.sum(axis=axis, keepdims=keepdims), (a,), back)

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def item(self):
        return float(self.data)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def value(x):
    """The plain ndarray behind x, whichever backend x belongs to."""
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- dispatching elementwise helpers (work on ndarrays and Tensors) ----------

def exp(x):
    if isinstance(x, Tensor):
        out_data = np.exp(x.data)
        return Tensor(out_data, (x,), lambda g: x._acc(g * out_data))
    return np.exp(x)


def log(x):
    if isinstance(x, Tensor):
        return Tensor(np.log(x.data), (x,), lambda g: x._acc(g / x.data))
    return np.log(x)


def sqrt(x):
    if isinstance(x, Tensor):
        out_data = np.sqrt(x.data)
        return Tensor(out_data, (x,), lambda g: x._acc(g * 0.5 / out_data))
    return np.sqrt(x)


def sigmoid(x):
    if isinstance(x, Tensor):
        s = _sigmoid(x.data)
        return Tensor(s, (x,), lambda g: x._acc(g * s * (1.0 - s)))
    return _sigmoid(np.asarray(x, dtype=np.float64))


def tanh(x):
    if isinstance(x, Tensor):
        t = np.tanh(x.data)
        return Tensor(t, (x,), lambda g: x._acc(g * (1.0 - t * t)))
    return np.tanh(x)


def absolute(x):
    if isinstance(x, Tensor):
        return Tensor(np.abs(x.data), (x,), lambda g: x._acc(g * np.sign(x.data)))
    return np.abs(x)


def concat(parts, axis=0):
    if any(isinstance(p, Tensor) for p in parts):
        parts = [as_tensor(p) for p in parts]
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]

        def back(g):
            for p, piece in zip(parts, np.split(g, splits, axis=axis)):
                p._acc(piece)

        return Tensor(np.concatenate([p.data for p in parts], axis=axis),
                      tuple(parts), back)
    return np.concatenate(parts, axis=axis)


def spectral_norm2(x, tol=1e-10, max_iter=10000):
    """Largest singular value; differentiable via d(sigma)/dA = u v^T."""
    if isinstance(x, Tensor):
        sigma, u, v = numeric.spectral_norm_uv(x.data, tol=tol, max_iter=max_iter)

        def back(g):
            x._acc(float(g) * np.outer(u, v))

        return Tensor(sigma, (x,), back)
    return numeric.spectral_norm(x, tol=tol, max_iter=max_iter)
