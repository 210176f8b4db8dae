"""Transformer building blocks on top of :mod:`prodelib.tensor`.

Activations are batch-first: ``(batch, positions, width)``. Key masks are
boolean ``(batch, keys)`` arrays with True at real (non-padded) positions.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Module, Parameter

NEG_INF = -1e9


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(T.uniform_init(rng, d_in, (d_in, d_out)))
        self.bias = Parameter(T.uniform_init(rng, d_in, (d_out,))) if bias else None

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.linear(x, self.weight, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator):
        self.table = Parameter(T.normal_init(rng, (n, d)))

    def __call__(self, ids: np.ndarray) -> T.Tensor:
        return T.embedding(self.table, ids)

    @property
    def capacity(self) -> int:
        return self.table.shape[0]


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


def attention_bias(key_mask: np.ndarray | None, n_queries: int, causal: bool = False) -> np.ndarray | None:
    """Additive (batch, 1, queries, keys) bias: 0 where attention is allowed, NEG_INF elsewhere."""
    bias = None
    if key_mask is not None:
        bias = np.where(key_mask[:, None, None, :], 0.0, NEG_INF)
    if causal:
        n_keys = key_mask.shape[1] if key_mask is not None else n_queries
        tri = np.where(np.tril(np.ones((n_queries, n_keys), dtype=bool)), 0.0, NEG_INF)[None, None]
        bias = tri if bias is None else bias + tri
    return bias


class MultiHeadAttention(Module):
    def __init__(self, d: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)
        self.dropout = dropout

    def _split(self, x: T.Tensor) -> T.Tensor:
        b, n, d = x.shape
        return x.reshape(b, n, self.heads, d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, query: T.Tensor, memory: T.Tensor, bias: np.ndarray | None = None,
                 rng: np.random.Generator | None = None) -> T.Tensor:
        if query.shape[-1] != memory.shape[-1]:
            raise T.DimensionError(f"attention width mismatch: query {query.shape} vs memory {memory.shape}")
        b, n, d = query.shape
        q = self._split(self.q(query))
        k = self._split(self.k(memory))
        v = self._split(self.v(memory))
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d // self.heads))
        if bias is not None:
            scores = scores + bias
        weights = T.softmax(scores, axis=-1)
        weights = T.dropout(weights, self.dropout, rng, self.training)
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(ctx)

    def cached(self, query: T.Tensor, memory: T.Tensor | None, cache: dict,
               bias: np.ndarray | None = None) -> T.Tensor:
        """Inference-time attention for newly appended query rows.

        With ``memory=None`` this is causal self-attention: the new rows' keys
        and values are appended to ``cache`` and attend to everything so far.
        Otherwise keys and values of ``memory`` are projected once and reused.
        """
        b, n, d = query.shape
        q = self._split(self.q(query))
        if memory is None:
            k, v = self._split(self.k(query)), self._split(self.v(query))
            if "k" in cache:
                k, v = T.concat([cache["k"], k], axis=2), T.concat([cache["v"], v], axis=2)
            cache["k"], cache["v"] = k, v
        else:
            if "k" not in cache:
                cache["k"], cache["v"] = self._split(self.k(memory)), self._split(self.v(memory))
            k, v = cache["k"], cache["v"]
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(d // self.heads))
        if bias is not None:
            scores = scores + bias
        ctx = T.matmul(T.softmax(scores, axis=-1), v).transpose(0, 2, 1, 3).reshape(b, n, d)
        return self.out(ctx)


class FeedForward(Module):
    def __init__(self, d: int, d_ff: int, rng: np.random.Generator):
        self.inner = Linear(d, d_ff, rng)
        self.outer = Linear(d_ff, d, rng)

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return self.outer(T.relu(self.inner(x)))


class EncoderBlock(Module):
    """Pre-norm self-attention block."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator,
                 dropout: float = 0.0, attn_dropout: float = 0.0):
        self.ln_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(d, heads, rng, attn_dropout)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)
        self.dropout = dropout

    def __call__(self, x: T.Tensor, bias: np.ndarray | None, rng=None) -> T.Tensor:
        h = self.ln_attn(x)
        x = x + T.dropout(self.attn(h, h, bias, rng), self.dropout, rng, self.training)
        x = x + T.dropout(self.ff(self.ln_ff(x)), self.dropout, rng, self.training)
        return x


class DecoderBlock(Module):
    """Pre-norm block: self-attention, cross-attention to the encoder, feed-forward."""

    def __init__(self, d: int, heads: int, d_ff: int, rng: np.random.Generator,
                 dropout: float = 0.0, attn_dropout: float = 0.0):
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(d, heads, rng, attn_dropout)
        self.ln_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, heads, rng, attn_dropout)
        self.ln_ff = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, rng)
        self.dropout = dropout

    def __call__(self, x: T.Tensor, memory: T.Tensor, self_bias, cross_bias, rng=None) -> T.Tensor:
        h = self.ln_self(x)
        x = x + T.dropout(self.self_attn(h, h, self_bias, rng), self.dropout, rng, self.training)
        x = x + T.dropout(self.cross_attn(self.ln_cross(x), memory, cross_bias, rng), self.dropout, rng, self.training)
        x = x + T.dropout(self.ff(self.ln_ff(x)), self.dropout, rng, self.training)
        return x

    def step(self, x: T.Tensor, memory: T.Tensor, cross_bias, cache: dict) -> T.Tensor:
        """Inference for new rows appended after the cached ones (no dropout)."""
        x = x + self.self_attn.cached(self.ln_self(x), None, cache.setdefault("self", {}))
        x = x + self.cross_attn.cached(self.ln_cross(x), memory, cache.setdefault("cross", {}), cross_bias)
        return x + self.ff(self.ln_ff(x))
