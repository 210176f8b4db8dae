"""Second-pass decoders over the pooled encoding.

* ``ctc``: fuzzy length prediction, one parallel pass over ``l`` MASK
  positions, CTC collapse of the per-position argmax.
* ``mask_predict``: same network, exactly ``predicted`` positions, no blanks.
* ``autoregressive``: left-to-right greedy decoding, one full decoder pass
  per emitted token (no caching).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import ctc
from . import tensor as T
from .corpus import BLANK, BOS, EOS
from .fusion import PooledEncoding
from .layers import DecoderBlock, Embedding, LayerNorm, Linear, attention_bias
from .tensor import Module, Parameter

MODES = ("ctc", "mask_predict", "autoregressive")


@dataclass
class DecoderConfig:
    num_layers: int = 2
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    alpha: float = 2.0
    max_length: int = 64
    mode: str = "ctc"
    dropout: float = 0.1
    attn_dropout: float = 0.1784

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown decoder mode {self.mode!r}; expected one of {MODES}")
        if self.mode == "ctc" and not self.alpha > 1.0:
            raise ValueError(f"ctc mode needs alpha > 1, got {self.alpha}")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")

    @property
    def position_capacity(self) -> int:
        scale = math.ceil(self.alpha) if self.mode == "ctc" else 1
        return self.max_length * scale + 1


def fuzzy_length(predicted, alpha: float, max_length: int):
    """``ceil(alpha * predicted)`` clamped to ``[1, max_length * ceil(alpha)]``.

    The product is nudged down by 1e-9 before the ceiling so that e.g.
    ``1.1 * 10`` (11.000000000000002 in binary) gives 11, not 12.
    """
    p = np.asarray(predicted)
    out = np.ceil(alpha * p - 1e-9).astype(np.int64)
    out = np.clip(out, 1, max_length * math.ceil(alpha))
    return int(out) if out.ndim == 0 else out


@dataclass
class LengthPrediction:
    class_log_probs: T.Tensor       # (batch, max_length); class k means length k + 1
    predicted: np.ndarray
    fuzzy_len: np.ndarray


class LengthModule(Module):
    def __init__(self, d: int, max_length: int, rng: np.random.Generator):
        self.proj = Linear(d, max_length, rng)
        self.max_length = max_length

    def __call__(self, enc: PooledEncoding, alpha: float) -> LengthPrediction:
        m = enc.mask[..., None].astype(float)
        pooled = T.tsum(enc.emb_pool * m, axis=1) / m.sum(axis=1)
        logp = T.log_softmax(self.proj(pooled), axis=-1)
        predicted = logp.data.argmax(axis=-1) + 1
        return LengthPrediction(logp, predicted, fuzzy_length(predicted, alpha, self.max_length))


def pinned_length(batch: int, predicted: int, alpha: float, max_length: int) -> LengthPrediction:
    """A length prediction fixed to ``predicted`` (benchmarks and tests)."""
    logp = np.full((batch, max_length), -1e3)
    logp[:, min(predicted, max_length) - 1] = 0.0
    pred = np.full(batch, predicted)
    return LengthPrediction(T.Tensor(logp), pred, fuzzy_length(pred, alpha, max_length))


class ParallelDecoder(Module):
    """MASK embedding + positions, self-attention over output slots, cross-attention to the encoding."""

    def __init__(self, cfg: DecoderConfig, vocab_size: int, rng: np.random.Generator):
        d = cfg.hidden_dim
        self.cfg = cfg
        self.mask_embedding = Parameter(T.normal_init(rng, (d,)))
        self.pos = Embedding(cfg.position_capacity, d, rng)
        self.blocks = [DecoderBlock(d, cfg.num_heads, cfg.ffn_dim, rng, cfg.dropout, cfg.attn_dropout)
                       for _ in range(cfg.num_layers)]
        self.ln_out = LayerNorm(d)
        self.out = Linear(d, vocab_size, rng)

    def __call__(self, enc: PooledEncoding, lengths: np.ndarray, rng=None) -> tuple[T.Tensor, np.ndarray]:
        lengths = np.asarray(lengths, dtype=np.int64)
        cap = self.pos.capacity
        if lengths.max() > cap:
            warnings.warn(f"decode length {lengths.max()} exceeds positional capacity {cap}; capping")
            lengths = np.minimum(lengths, cap)
        n = int(lengths.max())
        mask = np.arange(n)[None, :] < lengths[:, None]
        x = self.mask_embedding + self.pos(np.arange(n))
        x = x + T.Tensor(np.zeros((len(lengths), n, 1)))
        self_bias = attention_bias(mask, n)
        cross_bias = attention_bias(enc.mask, n)
        for block in self.blocks:
            x = block(x, enc.emb_pool, self_bias, cross_bias, rng)
        return self.out(self.ln_out(x)), mask


class AutoregressiveDecoder(Module):
    def __init__(self, cfg: DecoderConfig, vocab_size: int, rng: np.random.Generator):
        d = cfg.hidden_dim
        self.cfg = cfg
        self.tok = Embedding(vocab_size, d, rng)
        self.pos = Embedding(cfg.position_capacity + 1, d, rng)
        self.blocks = [DecoderBlock(d, cfg.num_heads, cfg.ffn_dim, rng, cfg.dropout, cfg.attn_dropout)
                       for _ in range(cfg.num_layers)]
        self.ln_out = LayerNorm(d)
        self.out = Linear(d, vocab_size, rng)
        self.invocations = 0

    def __call__(self, enc: PooledEncoding, prefix: np.ndarray, prefix_mask: np.ndarray, rng=None) -> T.Tensor:
        """Logits for the token following each prefix position; ``prefix`` starts with BOS."""
        self.invocations += 1
        n = prefix.shape[1]
        if n > self.pos.capacity:
            raise ValueError(f"prefix length {n} exceeds positional capacity {self.pos.capacity}")
        x = self.tok(prefix) + self.pos(np.arange(n))[None]
        self_bias = attention_bias(prefix_mask, n, causal=True)
        cross_bias = attention_bias(enc.mask, n)
        for block in self.blocks:
            x = block(x, enc.emb_pool, self_bias, cross_bias, rng)
        return self.out(self.ln_out(x))

    def step(self, enc: PooledEncoding, tokens: np.ndarray, position: int, caches: list[dict]) -> T.Tensor:
        """Logits ``(batch, vocab)`` after feeding ``tokens`` at ``position``.

        One full decoder forward for the new position; keys and values of the
        earlier positions come from ``caches`` (one dict per block, start with
        empty dicts), which gives the same logits as re-running the prefix.
        """
        self.invocations += 1
        if position >= self.pos.capacity:
            raise ValueError(f"prefix length {position + 1} exceeds positional capacity {self.pos.capacity}")
        x = self.tok(np.asarray(tokens)[:, None]) + self.pos(np.array([position]))[None]
        cross_bias = attention_bias(enc.mask, 1)
        for block, cache in zip(self.blocks, caches):
            x = block.step(x, enc.emb_pool, cross_bias, cache)
        return self.out(self.ln_out(x))[:, 0]


def decode_ctc(enc: PooledEncoding, lp: LengthPrediction, decoder: ParallelDecoder,
               blank: int = BLANK) -> list[ctc.CtcOutput]:
    logits, mask = decoder(enc, lp.fuzzy_len)
    outs = []
    for b in range(logits.shape[0]):
        outs.append(ctc.greedy_decode(logits.data[b, :mask[b].sum()], blank))
    return outs


def decode_mask_predict(enc: PooledEncoding, lp: LengthPrediction, decoder: ParallelDecoder,
                        output_mask: np.ndarray) -> list[list[int]]:
    """Exactly ``lp.predicted`` tokens per example, argmax over parse tokens only."""
    logits, mask = decoder(enc, lp.predicted)
    scores = np.where(output_mask, logits.data, -np.inf)
    ids = scores.argmax(axis=-1)
    return [[int(t) for t in ids[b, :mask[b].sum()]] for b in range(ids.shape[0])]


def decode_autoregressive(enc: PooledEncoding, decoder: AutoregressiveDecoder, max_len: int,
                          output_mask: np.ndarray | None = None,
                          force_length: int | None = None) -> list[list[int]]:
    """Greedy left-to-right decoding; stops at EOS or ``max_len``.

    With ``force_length`` every example emits exactly that many non-EOS
    tokens and then EOS, i.e. ``force_length + 1`` decoder invocations.
    """
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    batch = enc.emb_pool.shape[0]
    allowed = np.ones(decoder.out.weight.shape[1], dtype=bool) if output_mask is None else output_mask.copy()
    allowed[EOS] = True
    seqs: list[list[int]] = [[] for _ in range(batch)]
    done = np.zeros(batch, dtype=bool)
    limit = max_len if force_length is None else force_length
    caches: list[dict] = [{} for _ in decoder.blocks]
    tokens = np.full(batch, BOS)
    step = 0
    while True:
        last = decoder.step(enc, tokens, step, caches).data
        scores = np.where(allowed, last, -np.inf)
        if force_length is not None:
            scores[:, EOS] = np.inf if step >= force_length else -np.inf
        nxt = scores.argmax(axis=-1)
        for b in range(batch):
            if not done[b]:
                if nxt[b] == EOS:
                    done[b] = True
                else:
                    seqs[b].append(int(nxt[b]))
        # finished rows keep being fed EOS; their outputs are ignored
        tokens = np.where(done, EOS, nxt)
        step += 1
        if done.all() or (step >= limit and force_length is None):
            break
    return seqs
