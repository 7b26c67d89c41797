"""Reverse-mode autograd over dense float32 numpy arrays.

A Tensor wraps an ndarray plus an optional gradient; ops build a graph of
parents and backward closures, and Tensor.backward() runs the chain rule
in reverse topological order. Only what the transformer needs is here.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

DTYPE = np.float32


def set_dtype(dtype) -> None:
    """Switch the engine's working precision.

    Training runs in float32; float64 is useful when comparing analytic
    gradients against central finite differences, where float32 rounding
    noise would swamp the tolerance.
    """
    global DTYPE
    DTYPE = np.dtype(dtype).type


class ShapeMismatch(Exception):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {shapes}")


class NotScalar(Exception):
    pass


def _as_array(value) -> np.ndarray:
    if isinstance(value, np.ndarray):
        return value.astype(DTYPE, copy=False)
    return np.asarray(value, dtype=DTYPE)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 parents=(), backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(
            p.requires_grad for p in parents)
        self._parents = tuple(parents)
        self._backward = backward

    # -- bookkeeping -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, grad: np.ndarray):
        grad = grad.astype(DTYPE, copy=False)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def backward(self):
        if self.data.size != 1:
            raise NotScalar(f"backward() needs a scalar, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                stack.append((parent, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))
        out._backward = backward
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _lift(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.data, other.shape))
        out._backward = backward
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __truediv__(self, other):
        return self * _lift(other) ** -1.0

    def __rtruediv__(self, other):
        return _lift(other) * self ** -1.0

    def __pow__(self, exponent: float):
        out = Tensor(self.data ** exponent, parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(
                    _unbroadcast(g * exponent * self.data ** (exponent - 1),
                                 self.shape))
        out._backward = backward
        return out

    def __matmul__(self, other):
        return matmul(self, other)

    # -- shape ops ---------------------------------------------------

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        original = self.shape
        out = Tensor(self.data.reshape(shape), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.reshape(original))
        out._backward = backward
        return out

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = np.argsort(axes)
        out = Tensor(self.data.transpose(axes), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g.transpose(inverse))
        out._backward = backward
        return out

    # -- reductions --------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims),
                     parents=(self,))

        def backward(g):
            if not self.requires_grad:
                return
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape))
        out._backward = backward
        return out

    def mean(self, axis=None, keepdims: bool = False):
        count = (self.data.size if axis is None
                 else np.prod([self.shape[a] for a in np.atleast_1d(axis)]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(count))

    # -- pointwise nonlinearities -------------------------------------

    def exp(self):
        out = Tensor(np.exp(self.data), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * out.data)
        out._backward = backward
        return out

    def log(self):
        out = Tensor(np.log(self.data), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g / self.data)
        out._backward = backward
        return out

    def tanh(self):
        out = Tensor(np.tanh(self.data), parents=(self,))

        def backward(g):
            if self.requires_grad:
                self._accumulate(g * (1.0 - out.data ** 2))
        out._backward = backward
        return out

    def __repr__(self):
        return (f"Tensor(shape={self.shape}, requires_grad="
                f"{self.requires_grad})")


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product; 1-D operands are promoted then squeezed."""
    a, b = _lift(a), _lift(b)
    if a.ndim == 1:
        return matmul(a.reshape(1, -1), b).reshape(
            b.shape[:-2] + (b.shape[-1],) if b.ndim > 1 else ())
    if b.ndim == 1:
        return matmul(a, b.reshape(-1, 1)).reshape(a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = Tensor(np.matmul(a.data, b.data), parents=(a, b))

    def backward(g):
        if a.requires_grad:
            grad_a = np.matmul(g, np.swapaxes(b.data, -1, -2))
            a._accumulate(_unbroadcast(grad_a, a.shape))
        if b.requires_grad:
            grad_b = np.matmul(np.swapaxes(a.data, -1, -2), g)
            b._accumulate(_unbroadcast(grad_b, b.shape))
    out._backward = backward
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0), parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * (x.data > 0))
    out._backward = backward
    return out


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU with analytic derivative."""
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = Tensor(x.data * cdf, parents=(x,))

    def backward(g):
        if x.requires_grad:
            pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data ** 2)
            x._accumulate(g * (cdf + x.data * pdf))
    out._backward = backward
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    exps = np.exp(shifted)
    probs = exps / exps.sum(axis=axis, keepdims=True)
    out = Tensor(probs, parents=(x,))

    def backward(g):
        if x.requires_grad:
            inner = (g * probs).sum(axis=axis, keepdims=True)
            x._accumulate(probs * (g - inner))
    out._backward = backward
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = Tensor(log_probs, parents=(x,))

    def backward(g):
        if x.requires_grad:
            probs = np.exp(log_probs)
            x._accumulate(g - probs * g.sum(axis=axis, keepdims=True))
    out._backward = backward
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor,
               eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply elementwise affine."""
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normalized = centered * (var + eps) ** -0.5
    return normalized * gain + bias


def embedding_lookup(table: Tensor, indices: np.ndarray) -> Tensor:
    """Row gather with scatter-add backward."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= table.shape[0]):
        raise ShapeMismatch("embedding_lookup", table.shape,
                            (int(indices.min()), int(indices.max())))
    out = Tensor(table.data[indices], parents=(table,))

    def backward(g):
        if table.requires_grad:
            grad = np.zeros_like(table.data)
            np.add.at(grad, indices, g)
            table._accumulate(grad)
    out._backward = backward
    return out


def masked_fill(x: Tensor, mask: np.ndarray, value: float) -> Tensor:
    """Set entries where mask is True to a constant (no grad through them)."""
    mask = np.asarray(mask, dtype=bool)
    out = Tensor(np.where(mask, np.float32(value), x.data), parents=(x,))

    def backward(g):
        if x.requires_grad:
            x._accumulate(_unbroadcast(np.where(mask, 0.0, g), x.shape))
    out._backward = backward
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]

    def backward(g):
        start = 0
        for t, size in zip(tensors, sizes):
            if t.requires_grad:
                index = [slice(None)] * g.ndim
                index[axis] = slice(start, start + size)
                t._accumulate(g[tuple(index)])
            start += size
    out._backward = backward
    return out


def masked_attention(query: Tensor, key: Tensor, value: Tensor,
                     mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention.

    mask is boolean with True = forbidden; forbidden entries get exactly
    zero weight. Shapes: query (..., Tq, d), key (..., Tk, d),
    value (..., Tk, dv).
    """
    if query.shape[-1] != key.shape[-1]:
        raise ShapeMismatch("masked_attention", query.shape, key.shape)
    if key.shape[-2] != value.shape[-2]:
        raise ShapeMismatch("masked_attention", key.shape, value.shape)
    scale = 1.0 / math.sqrt(query.shape[-1])
    scores = matmul(query, key.transpose(
        *range(key.ndim - 2), key.ndim - 1, key.ndim - 2)) * scale
    if mask is not None:
        scores = masked_fill(scores, mask, -1e30)
    weights = softmax(scores, axis=-1)
    if mask is not None:
        # -1e30 already forces ~0, but make "exactly zero" literal
        weights = masked_fill(weights, mask, 0.0)
    return matmul(weights, value)


def cross_entropy(logits: Tensor, targets: np.ndarray,
                  ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over non-ignored targets.

    logits: (..., V); targets: integer array matching logits[..., 0].
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ShapeMismatch("cross_entropy", logits.shape, targets.shape)
    log_probs = log_softmax(logits, axis=-1)
    flat = log_probs.reshape(-1, logits.shape[-1])
    flat_targets = targets.reshape(-1)
    keep = np.ones_like(flat_targets, dtype=bool)
    if ignore_index is not None:
        keep = flat_targets != ignore_index
    if not keep.any():
        raise ValueError("cross_entropy: every target is ignored")
    safe_targets = np.where(keep, flat_targets, 0)
    one_hot = np.zeros((flat_targets.size, logits.shape[-1]), dtype=DTYPE)
    one_hot[np.arange(flat_targets.size), safe_targets] = 1.0
    one_hot[~keep] = 0.0
    picked = (flat * Tensor(one_hot)).sum(axis=-1)
    return -(picked.sum() * (1.0 / float(keep.sum())))
