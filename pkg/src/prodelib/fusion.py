"""Second-pass deliberation encoder: fuse text and audio channels, then pool.

    attn  = MHA(query=text, key=audio, value=audio)
    stack = concat(text, attn)          # feature axis, width 2D
    fused = Linear(stack)               # 2D -> hidden
    pool  = TransformerEncoder(fused)   # pre-norm self-attention blocks
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .corpus import FirstPassOutput
from .layers import Embedding, EncoderBlock, LayerNorm, Linear, MultiHeadAttention, attention_bias
from .tensor import Module


@dataclass
class EncoderConfig:
    hidden_dim: int = 64
    num_pool_layers: int = 2
    num_heads: int = 4
    ffn_dim: int = 128
    dropout: float = 0.1697
    max_positions: int = 128

    def __post_init__(self):
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")


@dataclass
class PooledEncoding:
    emb_pool: T.Tensor
    mask: np.ndarray
    source: FirstPassOutput | None = None


class FusionEncoder(Module):
    def __init__(self, cfg: EncoderConfig, first_pass_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        d = cfg.hidden_dim
        # per-channel adapters only when the first pass is narrower/wider than the model
        if first_pass_dim != d:
            self.text_adapter = Linear(first_pass_dim, d, rng)
            self.aud_adapter = Linear(first_pass_dim, d, rng)
        else:
            self.text_adapter = self.aud_adapter = None
        self.text_pos = Embedding(cfg.max_positions, d, rng)
        self.aud_pos = Embedding(cfg.max_positions, d, rng)
        self.cross = MultiHeadAttention(d, cfg.num_heads, rng)
        self.fuse = Linear(2 * d, d, rng)
        self.blocks = [EncoderBlock(d, cfg.num_heads, cfg.ffn_dim, rng, cfg.dropout, cfg.dropout)
                       for _ in range(cfg.num_pool_layers)]
        self.ln_out = LayerNorm(d)

    def __call__(self, fp: FirstPassOutput, rng: np.random.Generator | None = None) -> PooledEncoding:
        text, aud = fp.emb_text, fp.emb_aud
        if self.text_adapter is not None:
            text, aud = self.text_adapter(text), self.aud_adapter(aud)
        n_text, n_aud = text.shape[1], aud.shape[1]
        if max(n_text, n_aud) > self.text_pos.capacity:
            raise ValueError(f"sequence longer than positional capacity {self.text_pos.capacity}")
        text = text + self.text_pos(np.arange(n_text))[None]
        aud = aud + self.aud_pos(np.arange(n_aud))[None]
        attn = self.cross(text, aud, attention_bias(fp.aud_mask, n_text), rng)
        fused = self.fuse(T.concat([text, attn], axis=-1))
        x = T.dropout(fused, self.cfg.dropout, rng, self.training)
        self_bias = attention_bias(fp.text_mask, n_text)
        for block in self.blocks:
            x = block(x, self_bias, rng)
        return PooledEncoding(self.ln_out(x), fp.text_mask, fp)


def fuse(fp: FirstPassOutput, encoder: FusionEncoder, rng=None) -> PooledEncoding:
    return encoder(fp, rng)
