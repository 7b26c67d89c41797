"""Transformer building blocks on top of the autograd Tensor."""

from __future__ import annotations

import numpy as np

from .autograd import (Tensor, embedding_lookup, gelu, layer_norm, masked_attention,
                       matmul)


class Parameter:
    """A trainable tensor with a freeze flag.

    Freezing drops requires_grad so the parameter accumulates no gradient
    and is skipped by the optimizer.
    """

    def __init__(self, array: np.ndarray):
        self.tensor = Tensor(array, requires_grad=True)
        self.frozen = False

    @property
    def data(self) -> np.ndarray:
        return self.tensor.data

    def freeze(self):
        self.frozen = True
        self.tensor.requires_grad = False
        self.tensor.grad = None

    def unfreeze(self):
        self.frozen = False
        self.tensor.requires_grad = True


class Module:
    """Minimal container: parameters are found by attribute walking."""

    def named_parameters(self, prefix: str = ""):
        for name, value in vars(self).items():
            path = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield path, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{path}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{path}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.tensor.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = set(params) ^ set(state)
            raise KeyError(f"parameter name mismatch: {sorted(missing)}")
        for name, p in params.items():
            array = np.asarray(state[name], dtype=np.float32)
            if array.shape != p.data.shape:
                raise ValueError(f"{name}: shape {array.shape} != "
                                 f"{p.data.shape}")
            p.tensor.data = array.copy()


def init_normal(rng: np.random.Generator, *shape, std: float = 0.02):
    return rng.normal(0.0, std, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int):
        self.weight = Parameter(init_normal(rng, in_dim, out_dim))
        self.bias = Parameter(np.zeros(out_dim, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight.tensor) + self.bias.tensor


class Embedding(Module):
    def __init__(self, rng, count: int, dim: int):
        self.weight = Parameter(init_normal(rng, count, dim))

    def __call__(self, indices: np.ndarray) -> Tensor:
        return embedding_lookup(self.weight.tensor, indices)


class LayerNorm(Module):
    def __init__(self, dim: int):
        self.gain = Parameter(np.ones(dim, dtype=np.float32))
        self.bias = Parameter(np.zeros(dim, dtype=np.float32))

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gain.tensor, self.bias.tensor)


class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        if dim % heads:
            raise ValueError(f"dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        # (..., T, dim) -> (..., heads, T, head_dim)
        *batch, t, _ = x.shape
        x = x.reshape(*batch, t, self.heads, self.head_dim)
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        return x.transpose(*axes)

    def _join(self, x: Tensor) -> Tensor:
        axes = list(range(x.ndim))
        axes[-3], axes[-2] = axes[-2], axes[-3]
        x = x.transpose(*axes)
        *batch, t, _, _ = x.shape
        return x.reshape(*batch, t, self.heads * self.head_dim)

    def __call__(self, x: Tensor, memory: Tensor | None = None,
                 mask: np.ndarray | None = None) -> Tensor:
        """Self-attention, or cross-attention when memory is given.

        mask is boolean (Tq, Tk) or broadcastable, True = forbidden.
        """
        source = x if memory is None else memory
        q = self._split(self.wq(x))
        k = self._split(self.wk(source))
        v = self._split(self.wv(source))
        attended = masked_attention(q, k, v, mask)
        return self.wo(self._join(attended))


class FeedForward(Module):
    def __init__(self, rng, dim: int, hidden: int | None = None):
        hidden = hidden or 4 * dim
        self.up = Linear(rng, dim, hidden)
        self.down = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.down(gelu(self.up(x)))


class TransformerBlock(Module):
    """Pre-LN block with optional cross-attention (decoder mode)."""

    def __init__(self, rng, dim: int, heads: int, cross_attention: bool = False):
        self.ln_self = LayerNorm(dim)
        self.self_attn = MultiHeadAttention(rng, dim, heads)
        if cross_attention:
            self.ln_cross = LayerNorm(dim)
            self.cross_attn = MultiHeadAttention(rng, dim, heads)
        self.ln_ff = LayerNorm(dim)
        self.ff = FeedForward(rng, dim)

    def __call__(self, x: Tensor, memory: Tensor | None = None,
                 self_mask: np.ndarray | None = None,
                 cross_mask: np.ndarray | None = None) -> Tensor:
        x = x + self.self_attn(self.ln_self(x), mask=self_mask)
        if memory is not None:
            x = x + self.cross_attn(self.ln_cross(x), memory=memory,
                                    mask=cross_mask)
        x = x + self.ff(self.ln_ff(x))
        return x


def causal_mask(length: int) -> np.ndarray:
    """True above the diagonal = future positions are forbidden."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)
