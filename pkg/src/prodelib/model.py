"""Full deliberation model: simulated first pass, fusion encoder, length module and one decoder."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .corpus import BLANK, BOS, EOS, Example, FirstPassEmbedder, Vocab, embed_first_pass, pad_ids
from .decoders import (AutoregressiveDecoder, DecoderConfig, LengthModule, LengthPrediction, ParallelDecoder,
                       decode_autoregressive, decode_ctc, decode_mask_predict, fuzzy_length)
from .fusion import EncoderConfig, FusionEncoder, PooledEncoding
from .tensor import Module


@dataclass
class ModelConfig:
    mode: str = "ctc"
    hidden_dim: int = 64
    num_heads: int = 4
    ffn_dim: int = 128
    encoder_layers: int = 2
    decoder_layers: int = 2
    first_pass_dim: int = 64
    alpha: float = 2.0
    max_length: int = 64
    encoder_dropout: float = 0.1697
    decoder_dropout: float = 0.1
    decoder_attn_dropout: float = 0.1784
    audio_units: int = 48
    # ctc training positions: fuzzy(predicted length) or fuzzy(gold length)
    ctc_positions: str = "predicted"

    def __post_init__(self):
        if self.ctc_positions not in ("predicted", "gold"):
            raise ValueError(f"ctc_positions must be 'predicted' or 'gold', got {self.ctc_positions!r}")

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.hidden_dim, self.encoder_layers, self.num_heads, self.ffn_dim, self.encoder_dropout)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.decoder_layers, self.hidden_dim, self.num_heads, self.ffn_dim, self.alpha,
                             self.max_length, self.mode, self.decoder_dropout, self.decoder_attn_dropout)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**raw)


@dataclass
class ModelOutputs:
    """What the joint loss consumes; which fields are set depends on the mode."""
    mode: str
    label_log_probs: T.Tensor            # (batch, positions, vocab)
    label_lengths: np.ndarray            # positions actually used per example
    targets: list[list[int]]
    length_log_probs: T.Tensor | None = None
    target_lengths: np.ndarray | None = None


class DeliberationModel(Module):
    def __init__(self, cfg: ModelConfig, vocab: Vocab, seed: int = 0):
        self.cfg = cfg
        self.vocab = vocab
        rng = np.random.default_rng([seed, 7])
        self.first_pass = FirstPassEmbedder(len(vocab), cfg.first_pass_dim, cfg.num_heads, rng, cfg.encoder_dropout,
                                            cfg.audio_units)
        self.encoder = FusionEncoder(cfg.encoder_config(), cfg.first_pass_dim, rng)
        dcfg = cfg.decoder_config()
        if cfg.mode == "autoregressive":
            self.length = None
            self.decoder = AutoregressiveDecoder(dcfg, len(vocab), rng)
        else:
            self.length = LengthModule(cfg.hidden_dim, cfg.max_length, rng)
            self.decoder = ParallelDecoder(dcfg, len(vocab), rng)
        self.output_mask = vocab.output_mask

    @property
    def mode(self) -> str:
        return self.cfg.mode

    def encode(self, examples: Sequence[Example], hyps: Sequence[Sequence[str]] | None = None,
               rng=None) -> PooledEncoding:
        fp = embed_first_pass(examples, self.vocab, self.first_pass, hyps, rng)
        return self.encoder(fp, rng)

    def forward(self, examples: Sequence[Example], hyps=None, rng=None) -> ModelOutputs:
        """Teacher-forced outputs for the joint loss."""
        enc = self.encode(examples, hyps, rng)
        targets = [self.vocab.encode(ex.parse) for ex in examples]
        tlen = np.array([len(t) for t in targets])
        if self.mode == "autoregressive":
            prefix, pmask = pad_ids([[BOS] + t for t in targets])
            logits = self.decoder(enc, prefix, pmask, rng)
            return ModelOutputs(self.mode, T.log_softmax(logits, axis=-1), tlen + 1, [t + [EOS] for t in targets])
        lp = self.length(enc, self.cfg.alpha)
        if self.mode == "ctc" and self.cfg.ctc_positions == "predicted":
            # mispredicted lengths are seen in training; too-short ones are skipped by the loss
            positions = lp.fuzzy_len
        elif self.mode == "ctc":
            positions = fuzzy_length(tlen, self.cfg.alpha, self.cfg.max_length)
        else:
            positions = tlen
        logits, _ = self.decoder(enc, positions, rng)
        return ModelOutputs(self.mode, T.log_softmax(logits, axis=-1), np.asarray(positions), targets,
                            lp.class_log_probs, np.minimum(tlen, self.cfg.max_length))

    def predict_length(self, enc: PooledEncoding) -> LengthPrediction:
        return self.length(enc, self.cfg.alpha)

    def decode(self, enc: PooledEncoding, lp: LengthPrediction | None = None) -> list[list[int]]:
        if self.mode == "autoregressive":
            return decode_autoregressive(enc, self.decoder, self.cfg.max_length, self.output_mask)
        lp = lp if lp is not None else self.predict_length(enc)
        if self.mode == "ctc":
            return [o.collapsed for o in decode_ctc(enc, lp, self.decoder, BLANK)]
        return decode_mask_predict(enc, lp, self.decoder, self.output_mask)

    def predict(self, examples: Sequence[Example], batch_size: int = 128) -> list[list[str]]:
        self.eval()
        out: list[list[str]] = []
        with T.no_grad():
            for i in range(0, len(examples), batch_size):
                chunk = examples[i:i + batch_size]
                out.extend(self.vocab.decode(ids) for ids in self.decode(self.encode(chunk)))
        return out

    # -- checkpoints ---------------------------------------------------------
    def save(self, path: str | Path, extra: dict | None = None) -> None:
        meta = {"model_config": dataclasses.asdict(self.cfg), "vocab": self.vocab.itos}
        if extra:
            meta.update(extra)
        T.save_checkpoint(path, self.state_dict(), meta)

    @classmethod
    def load(cls, path: str | Path) -> tuple["DeliberationModel", dict]:
        state, meta = T.load_checkpoint(path)
        model = cls(ModelConfig.from_dict(meta["model_config"]), Vocab(meta["vocab"]))
        model.load_state_dict(state)
        return model, meta
