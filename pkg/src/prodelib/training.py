"""Joint training: label loss + lambda * length loss, AdamW, tri-stage learning rate."""

from __future__ import annotations

import copy
import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .corpus import BLANK, Example, Vocab, by_split
from .ctc import ctc_nll
from .model import DeliberationModel, ModelConfig, ModelOutputs
from .noising import ConfusionDictionary, NoiseSpec, apply_meta, build_confusions, example_rng

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class LossWeights:
    lam: float = 0.2504
    label_smoothing: float = 0.1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not 0.0 <= self.label_smoothing < 0.5:
            raise ValueError(f"label smoothing must lie in [0, 0.5), got {self.label_smoothing}")


@dataclass
class ScheduleSpec:
    warmup_epochs: float = 10
    hold_epochs: float = 40
    decay_epochs: float = 95
    peak_lr: float = 0.00085
    floor_lr: float = 0.0000085

    def __post_init__(self):
        if min(self.warmup_epochs, self.hold_epochs, self.decay_epochs) < 0:
            raise ValueError("schedule stage lengths must be >= 0")
        if not 0.0 <= self.floor_lr <= self.peak_lr:
            raise ValueError(f"need 0 <= floor_lr <= peak_lr, got {self.floor_lr} / {self.peak_lr}")

    @property
    def total_epochs(self) -> float:
        return self.warmup_epochs + self.hold_epochs + self.decay_epochs

    def scaled(self, factor: float) -> "ScheduleSpec":
        return dataclasses.replace(self, warmup_epochs=self.warmup_epochs * factor,
                                   hold_epochs=self.hold_epochs * factor, decay_epochs=self.decay_epochs * factor)


def lr_at(epoch: float, s: ScheduleSpec) -> float:
    """Linear warmup from 0, constant hold, exponential decay to the floor, floor afterwards.

    ``epoch`` may be fractional (the training loop evaluates it per step).
    With ``floor_lr == 0`` the decay stage is linear instead.
    """
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if epoch < s.warmup_epochs:
        return s.peak_lr * epoch / s.warmup_epochs
    epoch -= s.warmup_epochs
    if epoch < s.hold_epochs:
        return s.peak_lr
    epoch -= s.hold_epochs
    if epoch < s.decay_epochs:
        frac = epoch / s.decay_epochs
        if s.floor_lr <= 0.0:
            return s.peak_lr * (1.0 - frac)
        return s.peak_lr * (s.floor_lr / s.peak_lr) ** frac
    return s.floor_lr


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    loss: LossWeights = field(default_factory=LossWeights)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    schedule_scale: float = 1.0
    epochs: int | None = None
    batch_size: int = 32
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.98)
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    eval_split: str = "valid"
    target_em: float | None = None

    @property
    def effective_schedule(self) -> ScheduleSpec:
        return self.schedule.scaled(self.schedule_scale)

    @property
    def num_epochs(self) -> int:
        if self.epochs is not None:
            return self.epochs
        return int(math.ceil(self.effective_schedule.total_epochs))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        parts = {"model": ModelConfig, "noise": NoiseSpec, "loss": LossWeights, "schedule": ScheduleSpec}
        kwargs = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for key, val in raw.items():
            if key not in names:
                raise ValueError(f"unknown training config field {key!r}")
            if key in parts:
                sub_names = {f.name for f in dataclasses.fields(parts[key])}
                bad = set(val) - sub_names
                if bad:
                    raise ValueError(f"unknown {key} config fields: {sorted(bad)}")
                kwargs[key] = parts[key](**val)
            elif key == "betas":
                kwargs[key] = tuple(val)
            else:
                kwargs[key] = val
        return cls(**kwargs)


DESK_EPOCHS = 8


def desk_config(epochs: int = DESK_EPOCHS) -> TrainConfig:
    """Defaults resized for a single CPU core and a 10k-example corpus.

    The model keeps its defaults; the schedule is compressed to ``epochs``
    (one warmup epoch, then 40% hold and 60% decay) with a higher peak rate.
    """
    if epochs < 2:
        raise ValueError(f"desk schedule needs at least 2 epochs, got {epochs}")
    rest = epochs - 1
    return TrainConfig(schedule=ScheduleSpec(1, 0.4 * rest, 0.6 * rest, 3e-3, 1e-4), epochs=epochs)


PRESETS = {"full": TrainConfig, "desk": desk_config}


def merge_config(base: TrainConfig, overrides: dict) -> TrainConfig:
    """``base`` with the (possibly nested) fields of ``overrides`` replaced."""
    raw = base.to_dict()
    for key, val in overrides.items():
        if isinstance(val, dict) and isinstance(raw.get(key), dict):
            raw[key] = {**raw[key], **val}
        else:
            raw[key] = val
    return TrainConfig.from_dict(raw)


# -- losses --------------------------------------------------------------------

def smoothed_nll(log_probs: T.Tensor, targets: np.ndarray, eps: float) -> T.Tensor:
    """Per-row ``(1-eps) * -log p[target] + eps * -mean_v log p``."""
    nll = -T.gather_last(log_probs, targets)
    if eps == 0.0:
        return nll
    return nll * (1.0 - eps) - T.mean(log_probs, axis=-1) * eps


@dataclass
class LossParts:
    label: float
    length: float
    total: float
    skipped: int = 0


def joint_loss(out: ModelOutputs, w: LossWeights, blank: int = BLANK) -> tuple[T.Tensor, LossParts]:
    eps = w.label_smoothing
    B, L, V = out.label_log_probs.shape
    skipped = 0
    if out.mode == "ctc":
        nll, feasible = ctc_nll(out.label_log_probs, out.label_lengths, out.targets, blank)
        skipped = int((~feasible).sum())
        n_ok = max(int(feasible.sum()), 1)
        label = T.tsum(nll) * (1.0 / n_ok)
        if eps > 0.0:
            # uniform-KL regulariser on each used output position, up to the constant log V
            used = (np.arange(L)[None, :] < out.label_lengths[:, None]) & feasible[:, None]
            weight = used / np.maximum(out.label_lengths, 1)[:, None] / n_ok
            kl = -T.tsum(T.mean(out.label_log_probs, axis=-1) * weight) - math.log(V) * used.any(axis=1).sum() / n_ok
            label = label * (1.0 - eps) + kl * eps
    else:
        tgt = np.zeros((B, L), dtype=np.int64)
        for b, t in enumerate(out.targets):
            tgt[b, :len(t)] = t
        used = np.arange(L)[None, :] < out.label_lengths[:, None]
        per_pos = smoothed_nll(out.label_log_probs, tgt, eps)
        label = T.tsum(per_pos * (used / used.sum()))
    length = None
    total = label
    if out.length_log_probs is not None:
        length = T.mean(smoothed_nll(out.length_log_probs, out.target_lengths - 1, eps))
        if w.lam != 0.0:
            total = label + length * w.lam
    parts = LossParts(float(label.data), 0.0 if length is None else float(length.data), float(total.data), skipped)
    return total, parts


# -- optimiser -------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay (applied to matrices only)."""

    def __init__(self, params: Sequence[T.Parameter], betas=(0.9, 0.98), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = list(params)
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            if lr == 0.0:
                continue
            if self.weight_decay and p.data.ndim >= 2:
                p.data -= lr * self.weight_decay * p.data
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(params: Sequence[T.Parameter], max_norm: float) -> float:
    grads = [p.grad for p in params if p.grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if not math.isfinite(norm):
        raise T.NonFiniteError("non-finite gradient norm")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


# -- training loop -------------------------------------------------------------------

@dataclass
class TrainResult:
    model: DeliberationModel
    history: list[dict]
    best_epoch: int
    best_em: float
    confusions: ConfusionDictionary
    skipped_infeasible: int = 0


HISTORY_FIELDS = ("epoch", "lr", "train_loss", "eval_em", "em_on_error_split", "em_on_clean_split")


def confusions_from_train(data: Sequence[Example]) -> ConfusionDictionary:
    train = by_split(data, "train")
    if not train:
        raise ValueError("dataset has no train split")
    return build_confusions((ex.hyp_words, ex.gold_words) for ex in train)


def train(config: TrainConfig, dataset: Sequence[Example], confusions: ConfusionDictionary | None = None,
          vocab: Vocab | None = None, eval_examples: Sequence[Example] | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Train one model; returns it with the best-eval-EM parameters loaded.

    Hypotheses of training examples are re-noised every epoch with per-example
    generators, so results do not depend on batch composition.
    """
    from .harness.evaluation import evaluate

    train_ex = by_split(dataset, "train")
    if not train_ex:
        raise ValueError("dataset has no train split")
    if eval_examples is None:
        eval_examples = by_split(dataset, config.eval_split) if config.eval_split else []
    vocab = vocab or Vocab.build(dataset)
    noise = config.noise
    if confusions is None:
        confusions = confusions_from_train(dataset) if not noise.is_identity else ConfusionDictionary()

    model = DeliberationModel(config.model, vocab, seed=config.seed)
    params = model.parameters()
    opt = AdamW(params, config.betas, weight_decay=config.weight_decay)
    sched = config.effective_schedule
    bs = config.batch_size
    n_batches = math.ceil(len(train_ex) / bs)

    history: list[dict] = []
    best_em, best_epoch = -1.0, -1
    best_state = model.state_dict()
    skipped_total = 0
    for epoch in range(config.num_epochs):
        model.train()
        order = np.random.default_rng([config.seed, epoch, 0]).permutation(len(train_ex))
        losses = []
        lr = 0.0
        for bi in range(n_batches):
            batch = [train_ex[i] for i in order[bi * bs:(bi + 1) * bs]]
            if noise.is_identity:
                hyps = None
            else:
                hyps = [apply_meta(ex.hyp_words, noise, confusions, example_rng(noise.seed + config.seed, epoch, ex.id))
                        for ex in batch]
            drop_rng = np.random.default_rng([config.seed, epoch, bi, 1])
            try:
                out = model.forward(batch, hyps, drop_rng)
                total, parts = joint_loss(out, config.loss)
                model.zero_grad()
                total.backward()
                clip_grad_norm(params, config.grad_clip)
            except T.NonFiniteError as exc:
                raise DivergenceError(
                    f"diverged at epoch {epoch} batch {bi} (batch seed [{config.seed}, {epoch}, {bi}]): {exc}") from exc
            skipped_total += parts.skipped
            lr = lr_at(epoch + bi / n_batches, sched)
            opt.step(lr)
            losses.append(parts.total)
        row = {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(losses)), "skipped": skipped_total}
        if eval_examples:
            rep = evaluate(model, eval_examples)
            row.update(eval_em=rep.em_total, em_on_error_split=rep.em_asr_error, em_on_clean_split=rep.em_no_asr_error)
            if rep.em_total > best_em:
                best_em, best_epoch = rep.em_total, epoch
                best_state = model.state_dict()
        else:
            row.update(eval_em=float("nan"), em_on_error_split=float("nan"), em_on_clean_split=float("nan"))
            best_state, best_epoch = model.state_dict(), epoch
        history.append(row)
        log.info("epoch %d lr %.2e loss %.4f em %.4f", epoch, lr, row["train_loss"], row["eval_em"])
        if on_epoch:
            on_epoch(row)
        if config.target_em is not None and row["eval_em"] >= config.target_em:
            break
    model.load_state_dict(best_state)
    model.eval()
    return TrainResult(model, history, best_epoch, best_em, confusions, skipped_total)
