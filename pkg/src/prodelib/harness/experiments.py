"""Multi-run experiments: mode comparison, denoising ablation and the alpha sweep.

Each run trains on the train split, keeps the best-validation checkpoint
and reports exact match on the held-out split (``test`` by default).
"""

from __future__ import annotations

import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from ..corpus import Example, Vocab, by_split
from ..noising import ConfusionDictionary, NoiseSpec
from ..training import TrainConfig, confusions_from_train, train
from .evaluation import EvalReport, evaluate
from .latency import LatencyProfile, bench_model

log = logging.getLogger(__name__)

SWEEP_FIELDS = ("variant", "seed", "em_total", "em_error", "em_clean")


@dataclass
class SweepRow:
    variant: str
    seed: int
    em_total: float
    em_error: float
    em_clean: float

    @classmethod
    def from_report(cls, variant: str, seed: int, rep: EvalReport) -> "SweepRow":
        return cls(variant, seed, rep.em_total, rep.em_asr_error, rep.em_no_asr_error)


def write_sweep_csv(rows: Sequence[SweepRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_FIELDS)
        for r in rows:
            w.writerow([r.variant, r.seed, f"{r.em_total:.6f}", f"{r.em_error:.6f}", f"{r.em_clean:.6f}"])


def read_sweep_csv(path: str | Path) -> list[SweepRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [SweepRow(r["variant"], int(r["seed"]), float(r["em_total"]), float(r["em_error"]),
                         float(r["em_clean"])) for r in csv.DictReader(fh)]


def mean_by_variant(rows: Sequence[SweepRow]) -> dict[str, SweepRow]:
    """Seed-averaged rows (seed field set to -1)."""
    out = {}
    for name in dict.fromkeys(r.variant for r in rows):
        sel = [r for r in rows if r.variant == name]
        out[name] = SweepRow(name, -1, float(np.mean([r.em_total for r in sel])),
                             float(np.mean([r.em_error for r in sel])), float(np.mean([r.em_clean for r in sel])))
    return out


def summarize(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'variant':<18}{'EM':>8}{'EM err':>9}{'EM clean':>10}"]
    for r in mean_by_variant(rows).values():
        lines.append(f"{r.variant:<18}{100 * r.em_total:8.2f}{100 * r.em_error:9.2f}{100 * r.em_clean:10.2f}")
    return "\n".join(lines)


def run_variants(variants: Mapping[str, TrainConfig], dataset: Sequence[Example], seeds: Sequence[int],
                 eval_split: str = "test", confusions: ConfusionDictionary | None = None,
                 on_run: Callable[[SweepRow], None] | None = None) -> list[SweepRow]:
    """Train every variant once per seed and evaluate on ``eval_split``."""
    vocab = Vocab.build(dataset)
    held_out = by_split(dataset, eval_split)
    if not held_out:
        raise ValueError(f"dataset has no {eval_split!r} examples")
    if confusions is None:
        confusions = confusions_from_train(dataset)
    rows = []
    for name, cfg in variants.items():
        for seed in seeds:
            res = train(dataclasses.replace(cfg, seed=seed), dataset, confusions, vocab)
            row = SweepRow.from_report(name, seed, evaluate(res.model, held_out))
            log.info("%s seed %d: EM %.4f (error %.4f, clean %.4f)", name, seed, row.em_total, row.em_error,
                     row.em_clean)
            rows.append(row)
            if on_run:
                on_run(row)
    return rows


def _with_mode(cfg: TrainConfig, mode: str, noise: NoiseSpec | None = None) -> TrainConfig:
    model = dataclasses.replace(cfg.model, mode=mode)
    return dataclasses.replace(cfg, model=model, noise=noise if noise is not None else cfg.noise)


def no_noise(spec: NoiseSpec) -> NoiseSpec:
    return dataclasses.replace(spec, meta="none")


def comparison_variants(template: TrainConfig) -> dict[str, TrainConfig]:
    """CTC with and without denoising, plus the Mask-Predict and autoregressive baselines (no noise)."""
    quiet = no_noise(template.noise)
    return {
        "ctc_denoise": _with_mode(template, "ctc"),
        "ctc_no_noise": _with_mode(template, "ctc", quiet),
        "mask_predict": _with_mode(template, "mask_predict", quiet),
        "autoregressive": _with_mode(template, "autoregressive", quiet),
    }


def ablation_variants(template: TrainConfig) -> dict[str, TrainConfig]:
    base = template.noise
    return {
        "sampling": dataclasses.replace(template, noise=dataclasses.replace(base, meta="sampling")),
        "del_only": dataclasses.replace(template, noise=dataclasses.replace(base, meta="single-del")),
        "subs_only": dataclasses.replace(template, noise=dataclasses.replace(base, meta="single-subs")),
        "no_noise": dataclasses.replace(template, noise=no_noise(base)),
    }


def mode_comparison(template: TrainConfig, dataset: Sequence[Example], seeds: Sequence[int] = (0, 1, 2),
                    **kw) -> list[SweepRow]:
    return run_variants(comparison_variants(template), dataset, seeds, **kw)


def denoise_ablation(template: TrainConfig, dataset: Sequence[Example], seeds: Sequence[int] = (0, 1, 2),
                     **kw) -> list[SweepRow]:
    return run_variants(ablation_variants(template), dataset, seeds, **kw)


def alpha_variants(template: TrainConfig, alphas: Sequence[float]) -> dict[str, TrainConfig]:
    out = {}
    for a in alphas:
        if not a > 1.0:
            raise ValueError(f"alpha must exceed 1, got {a}")
        out[f"alpha={a:g}"] = dataclasses.replace(template, model=dataclasses.replace(template.model, mode="ctc",
                                                                                      alpha=float(a)))
    return out


def alpha_sweep(template: TrainConfig, dataset: Sequence[Example], alphas: Sequence[float], seed: int = 0,
                bench_lengths: Sequence[int] = (5, 25, 50), bench_runs: int = 50, eval_split: str = "test",
                confusions: ConfusionDictionary | None = None) -> tuple[list[SweepRow], dict[str, LatencyProfile]]:
    """One CTC model per alpha (same seed otherwise): EM rows plus a decoder latency profile each."""
    variants = alpha_variants(template, alphas)
    vocab = Vocab.build(dataset)
    held_out = by_split(dataset, eval_split)
    if confusions is None:
        confusions = confusions_from_train(dataset)
    rows, profiles = [], {}
    for name, cfg in variants.items():
        res = train(dataclasses.replace(cfg, seed=seed), dataset, confusions, vocab)
        rows.append(SweepRow.from_report(name, seed, evaluate(res.model, held_out)))
        profiles[name] = bench_model(res.model, held_out[0], bench_lengths, bench_runs, name=name)
    return rows, profiles
