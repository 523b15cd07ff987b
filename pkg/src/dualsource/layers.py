"""Transformer building blocks on top of :mod:`dualsource.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def glorot(rng: np.random.Generator, shape, dtype) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Module:
    """Anything holding Parameters as attributes or in lists of modules."""

    def parameters(self) -> Iterator[Parameter]:
        seen: set[int] = set()
        for p in self._walk():
            if id(p) not in seen:
                seen.add(id(p))
                yield p

    def _walk(self) -> Iterator[Parameter]:
        for value in vars(self).values():
            if isinstance(value, Parameter):
                yield value
            elif isinstance(value, Module):
                yield from value._walk()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item._walk()
                    elif isinstance(item, Parameter):
                        yield item


class Linear(Module):
    def __init__(self, name: str, n_in: int, n_out: int, rng, dtype, bias: bool = True):
        self.weight = Parameter(glorot(rng, (n_in, n_out), dtype), f"{name}.weight")
        self.bias = Parameter(np.zeros(n_out, dtype=dtype), f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return T.add(y, self.bias) if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, name: str, dim: int, dtype, eps: float = 1e-9):
        self.gamma = Parameter(np.ones(dim, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(dim, dtype=dtype), f"{name}.beta")
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class FeedForward(Module):
    def __init__(self, name: str, dim: int, hidden: int, rng, dtype):
        self.inner = Linear(f"{name}.inner", dim, hidden, rng, dtype)
        self.outer = Linear(f"{name}.outer", hidden, dim, rng, dtype)

    def __call__(self, x: Tensor, drop: float = 0.0, rng=None) -> Tensor:
        return self.outer(T.dropout(T.relu(self.inner(x)), drop, rng))


class MultiHeadAttention(Module):
    def __init__(self, name: str, dim: int, heads: int, rng, dtype):
        if dim % heads:
            raise ValueError(f"model_dim {dim} is not divisible by heads {heads}")
        self.heads = heads
        self.query = Linear(f"{name}.query", dim, dim, rng, dtype)
        self.key = Linear(f"{name}.key", dim, dim, rng, dtype)
        self.value = Linear(f"{name}.value", dim, dim, rng, dtype)
        self.out = Linear(f"{name}.out", dim, dim, rng, dtype)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        return T.transpose(T.reshape(x, (b, n, self.heads, d // self.heads)), (0, 2, 1, 3))

    def __call__(self, query: Tensor, memory: Tensor, mask: np.ndarray, drop: float = 0.0, rng=None) -> Tensor:
        """``mask`` broadcasts to (batch, heads, len_q, len_k); True = attend."""
        b, lq, d = query.shape
        q = self._split(self.query(query))
        k = self._split(self.key(memory))
        v = self._split(self.value(memory))
        scores = T.scale(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(d // self.heads))
        attn = T.dropout(T.softmax(scores, mask), drop, rng)
        ctx = T.transpose(T.matmul(attn, v), (0, 2, 1, 3))
        return self.out(T.reshape(ctx, (b, lq, d)))


def sinusoid_positions(length: int, dim: int, dtype=np.float64) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle[:, : dim - dim // 2])
    return out.astype(dtype)


def padding_mask(lengths_or_mask: np.ndarray) -> np.ndarray:
    """(batch, len) keep-mask -> (batch, 1, 1, len) attention mask."""
    m = np.asarray(lengths_or_mask, dtype=bool)
    return m[:, None, None, :]


def causal_mask(length: int) -> np.ndarray:
    return np.tril(np.ones((length, length), dtype=bool))[None, None, :, :]
