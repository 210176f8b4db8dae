"""Decoder latency microbenchmark across forced output lengths.

Encoding happens once per length outside the timed region; only the
decoder call(s) are timed. CTC and Mask-Predict get a pinned length
prediction, the autoregressive decoder a forced generation length, so the
output length is set by the benchmark rather than the model's quality.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .. import tensor as T
from ..corpus import BLANK, Example
from ..decoders import decode_autoregressive, decode_ctc, decode_mask_predict, pinned_length

DEFAULT_LENGTHS = tuple(range(5, 55, 5))

# a single timed call should span at least this many clock ticks
_MIN_TICKS = 1000


@dataclass
class LengthStats:
    length: int
    mean: float
    median: float
    p95: float
    runs: int
    inner_loops: int = 1


@dataclass
class LatencyProfile:
    """Per-length timing summary for one decoder; times are microseconds per decode."""
    mode: str
    stats: list[LengthStats]
    samples: dict[int, list[float]] = field(default_factory=dict)
    slope: float = float("nan")
    intercept: float = float("nan")
    r2: float = float("nan")
    coarse_timer: bool = False
    encode_micros: float = 0.0

    def at(self, length: int) -> LengthStats:
        for s in self.stats:
            if s.length == length:
                return s
        raise KeyError(f"length {length} was not benchmarked")

    def summary(self) -> str:
        lines = [f"{self.mode}: slope {self.slope:.2f} us/token, R^2 {self.r2:.4f}"
                 + (" (inner-loop batching used)" if self.coarse_timer else "")]
        for s in self.stats:
            lines.append(f"  len {s.length:3d}  mean {s.mean:10.1f}  median {s.median:10.1f}  p95 {s.p95:10.1f} us")
        return "\n".join(lines)


def fit_line(x: Sequence[float], y: Sequence[float]) -> tuple[float, float, float]:
    """Least-squares slope, intercept and R^2."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def decoder_call(model, enc, length: int) -> Callable[[], object]:
    """Zero-argument closure running only the decoder at a forced output length."""
    cfg = model.cfg
    if model.mode == "autoregressive":
        return lambda: decode_autoregressive(enc, model.decoder, max(length, cfg.max_length),
                                             model.output_mask, force_length=length)
    lp = pinned_length(enc.emb_pool.shape[0], length, cfg.alpha, cfg.max_length)
    if model.mode == "ctc":
        return lambda: decode_ctc(enc, lp, model.decoder, BLANK)
    return lambda: decode_mask_predict(enc, lp, model.decoder, model.output_mask)


def _time_calls(fn: Callable[[], object], runs: int, warmup: int, inner: int) -> list[float]:
    for _ in range(warmup):
        fn()
    out = []
    for _ in range(runs):
        t0 = time.perf_counter_ns()
        for _ in range(inner):
            fn()
        out.append((time.perf_counter_ns() - t0) / inner / 1000.0)
    return out


def bench_model(model, example: Example, lengths: Sequence[int] = DEFAULT_LENGTHS, runs: int = 50,
                warmup: int = 5, name: str | None = None) -> LatencyProfile:
    if runs < 50:
        raise ValueError(f"need at least 50 timed runs per length, got {runs}")
    if warmup < 5:
        raise ValueError(f"need at least 5 warmup runs, got {warmup}")
    too_long = [n for n in lengths if not 1 <= n <= model.cfg.max_length]
    if too_long:
        raise ValueError(f"lengths {too_long} outside 1..{model.cfg.max_length} (the model's max_length)")
    resolution = time.get_clock_info("perf_counter").resolution
    model.eval()
    stats, samples = [], {}
    coarse = False
    enc_times = []
    with T.no_grad(), T.finite_checks(False), threadpool_limits(limits=1):
        for length in lengths:
            t0 = time.perf_counter_ns()
            enc = model.encode([example])
            enc_times.append((time.perf_counter_ns() - t0) / 1000.0)
            fn = decoder_call(model, enc, int(length))
            t0 = time.perf_counter()
            fn()
            once = time.perf_counter() - t0
            inner = 1
            if once < _MIN_TICKS * resolution:
                inner = int(math.ceil(_MIN_TICKS * resolution / max(once, resolution)))
                coarse = True
            xs = _time_calls(fn, runs, warmup, inner)
            samples[int(length)] = xs
            stats.append(LengthStats(int(length), float(np.mean(xs)), float(np.median(xs)),
                                     float(np.percentile(xs, 95)), runs, inner))
    prof = LatencyProfile(name or model.mode, stats, samples, coarse_timer=coarse,
                          encode_micros=float(np.mean(enc_times)))
    if len(stats) >= 2:
        prof.slope, prof.intercept, prof.r2 = fit_line([s.length for s in stats], [s.mean for s in stats])
    return prof


def bench_latency(models: Mapping[str, object], example: Example, lengths: Sequence[int] = DEFAULT_LENGTHS,
                  runs: int = 50, warmup: int = 5) -> dict[str, LatencyProfile]:
    """Benchmark each named model's decoder at every length."""
    return {name: bench_model(m, example, lengths, runs, warmup, name=name) for name, m in models.items()}


def write_latency_csv(profiles: Mapping[str, LatencyProfile], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "length", "run", "micros"])
        for name, prof in profiles.items():
            for length, xs in prof.samples.items():
                for i, x in enumerate(xs):
                    w.writerow([name, length, i, f"{x:.3f}"])
