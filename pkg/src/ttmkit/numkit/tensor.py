"""Dense float64 tensors with reverse-mode gradient tracking.

Each op records its parents and a closure that pushes the output gradient
back to them. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Gradients accumulate into ``.grad`` until zeroed.
"""

from __future__ import annotations

import math

import numpy as np


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ContractError(ValueError):
    """A documented precondition of an operation was violated."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf value appeared in a computation."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndim_extra = grad.ndim - len(shape)
    if ndim_extra > 0:
        grad = grad.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------

    @classmethod
    def _make(cls, data, parents, backward, name=None):
        out = cls(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = parents
            out._backward = backward
        out.name = name
        return out

    @property
    def shape(self) -> tuple:
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
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f", name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    # -- autodiff -------------------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Populate ``.grad`` on every leaf reachable from this tensor.

        Without an explicit seed the tensor must be a scalar. Repeated calls
        accumulate into existing gradients.
        """
        if grad is None:
            if self.data.size != 1:
                raise ContractError(
                    f"backward() needs a scalar loss, got shape {self.shape}"
                )
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg

    # -- elementwise arithmetic ----------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data + other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(g, b_shape)),
        )

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        other = as_tensor(other)
        a_shape, b_shape = self.shape, other.shape
        return Tensor._make(
            self.data - other.data,
            (self, other),
            lambda g: (_unbroadcast(g, a_shape), _unbroadcast(-g, b_shape)),
        )

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a * b,
            (self, other),
            lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor._make(
            a / b,
            (self, other),
            lambda g: (
                _unbroadcast(g / b, a.shape),
                _unbroadcast(-g * a / (b * b), b.shape),
            ),
        )

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, p: float):
        a = self.data
        return Tensor._make(a**p, (self,), lambda g: (g * p * a ** (p - 1),))

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        a_shape = self.shape
        basic = _is_basic_index(idx)

        def bw(g):
            full = np.zeros(a_shape)
            if basic:
                full[idx] = g
            else:
                np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(self.data[idx], (self,), bw)

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a_shape = self.shape
        return Tensor._make(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(a_shape),)
        )

    def transpose(self, *axes) -> "Tensor":
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return Tensor._make(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),)
        )

    def swapaxes(self, a: int, b: int) -> "Tensor":
        return Tensor._make(
            np.swapaxes(self.data, a, b), (self,), lambda g: (np.swapaxes(g, a, b),)
        )

    @property
    def T(self) -> "Tensor":
        return self.swapaxes(-1, -2)

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a_shape = self.shape

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, a_shape),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.data.size if axis is None else np.prod(
            [self.shape[a] for a in np.atleast_1d(axis)]
        )
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- pointwise nonlinearities ---------------------------------------------

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,))

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,))

    def sqrt(self) -> "Tensor":
        out = np.sqrt(self.data)
        return Tensor._make(out, (self,), lambda g: (g * 0.5 / out,))

    def tanh(self) -> "Tensor":
        out = np.tanh(self.data)
        return Tensor._make(out, (self,), lambda g: (g * (1.0 - out * out),))

    def sigmoid(self) -> "Tensor":
        out = _sigmoid(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out * (1.0 - out),))

    def clip(self, lo: float, hi: float) -> "Tensor":
        a = self.data
        inside = (a >= lo) & (a <= hi)
        return Tensor._make(np.clip(a, lo, hi), (self,), lambda g: (g * inside,))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(p is None or p is Ellipsis or isinstance(p, (int, slice)) for p in parts)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


# -- free functions -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 1 and b.ndim == 2 and a.shape[0] == b.shape[0]:
        return matmul(a.reshape(1, a.shape[0]), b).reshape(b.shape[1])
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    ad, bd = a.data, b.data
    if bd.ndim == 2:
        # batched input times a weight matrix: fold the batch into one GEMM
        k, n = bd.shape
        a2 = ad.reshape(-1, k)

        def bw2(g):
            g2 = g.reshape(-1, n)
            return (g2 @ bd.T).reshape(ad.shape), a2.T @ g2

        return Tensor._make((a2 @ bd).reshape(ad.shape[:-1] + (n,)), (a, b), bw2)

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._make(ad @ bd, (a, b), bw)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bw
    )


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; shifts by the max before exponentiating."""
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._make(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    a = x.data
    n = a.shape[-1]
    mu = a.mean(axis=-1, keepdims=True)
    xc = a - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gain.data

    def bw(g):
        gx = g * gd
        dx = inv / n * (n * gx - gx.sum(-1, keepdims=True) - xhat * (gx * xhat).sum(-1, keepdims=True))
        return (
            dx,
            _unbroadcast(g * xhat, gd.shape),
            _unbroadcast(g, bias.data.shape),
        )

    return Tensor._make(xhat * gd + bias.data, (x, gain, bias), bw)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(x: Tensor) -> Tensor:
    """Tanh approximation of GELU (smooth, so finite differences stay exact)."""
    a = x.data
    a2 = a * a
    u = _GELU_C * a * (1.0 + 0.044715 * a2)
    t = np.tanh(u)
    out = 0.5 * a * (1.0 + t)

    def bw(g):
        du = _GELU_C * (1.0 + 3 * 0.044715 * a2)
        return (g * (0.5 * (1.0 + t) + 0.5 * a * (1.0 - t * t) * du),)

    return Tensor._make(out, (x,), bw)


def cross3(a: Tensor, b: Tensor) -> Tensor:
    """Cross product over a trailing axis of length 3."""
    ad, bd = a.data, b.data

    def bw(g):
        # d(a x b)/da applied to g is b x g; for b it is g x a
        return np.cross(bd, g), np.cross(g, ad)

    return Tensor._make(np.cross(ad, bd), (a, b), bw)


def check_finite(t: Tensor, label: str = "tensor") -> Tensor:
    if not np.all(np.isfinite(t.data)):
        raise NonFiniteError(f"non-finite values in {label} (shape {t.shape})")
    return t
