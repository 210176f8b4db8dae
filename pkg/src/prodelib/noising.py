"""Word-level text corruption for denoising training.

Deletion removes ``N ~ Binomial(len, p)`` uniformly chosen words with no
placeholder left behind. Substitution picks positions the same way and
replaces each chosen word that has dictionary entries by a
frequency-weighted confusion. The meta operations combine the two: sampling
picks one operator per call, sequential applies both.
"""

from __future__ import annotations

import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

META_MODES = ("sampling", "sequential", "single-del", "single-subs", "none")


@dataclass
class NoiseSpec:
    deletion_p: float = 0.0026
    substitution_p: float = 0.0882
    meta: str = "sampling"
    seed: int = 0
    sequential_order: tuple[str, ...] = ("substitute", "delete")

    def __post_init__(self):
        for name in ("deletion_p", "substitution_p"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.meta not in META_MODES:
            raise ValueError(f"unknown meta mode {self.meta!r}; expected one of {META_MODES}")
        self.sequential_order = tuple(self.sequential_order)
        if sorted(self.sequential_order) != ["delete", "substitute"]:
            raise ValueError(f"sequential_order must be a permutation of (substitute, delete), got {self.sequential_order}")

    @property
    def is_identity(self) -> bool:
        return self.meta == "none" or (self.deletion_p == 0.0 and self.substitution_p == 0.0)


class ConfusionDictionary:
    """source word -> replacement counts."""

    def __init__(self, counts: dict[str, dict[str, int]] | None = None):
        self.counts: dict[str, dict[str, int]] = {}
        for src, reps in (counts or {}).items():
            for rep, c in reps.items():
                if c <= 0:
                    raise ValueError(f"non-positive count for {src}->{rep}")
                if rep == src:
                    continue
                self.counts.setdefault(src, {})[rep] = int(c)
        self._cache: dict[str, tuple[list[str], np.ndarray]] = {}

    def __contains__(self, word: str) -> bool:
        return word in self.counts

    def __len__(self) -> int:
        return len(self.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionDictionary) and self.counts == other.counts

    def entries(self, word: str) -> list[tuple[str, int]]:
        """Replacements for ``word``, most frequent first (ties alphabetical)."""
        return sorted(self.counts.get(word, {}).items(), key=lambda kv: (-kv[1], kv[0]))

    def total(self, word: str) -> int:
        return sum(self.counts.get(word, {}).values())

    def rows(self) -> list[tuple[str, str, int]]:
        return [(src, rep, c) for src in sorted(self.counts) for rep, c in self.entries(src)]

    def top_pair(self) -> tuple[str, str, int] | None:
        """Highest-count (source, replacement, count); ties go to the alphabetically first pair."""
        return min(self.rows(), key=lambda r: (-r[2], r[0], r[1]), default=None)

    def sample(self, word: str, rng: np.random.Generator) -> str:
        if word not in self._cache:
            ents = self.entries(word)
            weights = np.array([c for _, c in ents], dtype=float)
            self._cache[word] = ([r for r, _ in ents], weights / weights.sum())
        reps, probs = self._cache[word]
        return reps[int(rng.choice(len(reps), p=probs))]

    # file format: header, then "source TAB replacement TAB count" rows
    def save(self, path: str | Path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("source\treplacement\tcount\n")
            for src, rep, c in self.rows():
                fh.write(f"{src}\t{rep}\t{c}\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "ConfusionDictionary":
        counts: dict[str, dict[str, int]] = defaultdict(dict)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if lineno == 1 and line.startswith("source\t"):
                    continue
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise ValueError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
                counts[parts[0]][parts[1]] = int(parts[2])
        return cls(counts)


def delete_noise(tokens: Sequence[str], p: float, rng: np.random.Generator) -> list[str]:
    tokens = list(tokens)
    if p <= 0.0 or not tokens:
        return tokens
    n = rng.binomial(len(tokens), p)
    if n == 0:
        return tokens
    drop = set(rng.choice(len(tokens), size=n, replace=False).tolist())
    return [t for i, t in enumerate(tokens) if i not in drop]


def substitute_noise(tokens: Sequence[str], p: float, confusions: ConfusionDictionary,
                     rng: np.random.Generator) -> list[str]:
    tokens = list(tokens)
    if p <= 0.0 or not tokens:
        return tokens
    n = rng.binomial(len(tokens), p)
    if n == 0:
        return tokens
    for i in rng.choice(len(tokens), size=n, replace=False):
        if tokens[i] in confusions:
            tokens[i] = confusions.sample(tokens[i], rng)
    return tokens


def apply_meta(tokens: Sequence[str], spec: NoiseSpec, confusions: ConfusionDictionary,
               rng: np.random.Generator) -> list[str]:
    if spec.meta == "none":
        return list(tokens)
    ops = {
        "delete": lambda toks: delete_noise(toks, spec.deletion_p, rng),
        "substitute": lambda toks: substitute_noise(toks, spec.substitution_p, confusions, rng),
    }
    if spec.meta == "single-del":
        return ops["delete"](tokens)
    if spec.meta == "single-subs":
        return ops["substitute"](tokens)
    if spec.meta == "sampling":
        branch = ("delete", "substitute")[int(rng.integers(2))]
        return ops[branch](tokens)
    out = list(tokens)
    for name in spec.sequential_order:
        out = ops[name](out)
    return out


def example_rng(seed: int, epoch: int, index: int) -> np.random.Generator:
    """Per-example stream, independent of batching or worker count."""
    return np.random.default_rng([seed, epoch, index])


# -- confusion extraction ------------------------------------------------------

def align(ref: Sequence[str], hyp: Sequence[str]) -> list[tuple[str | None, str | None]]:
    """Minimum-edit-distance alignment with unit costs.

    Returns (ref_word, hyp_word) pairs; ``None`` marks a deletion (hyp side)
    or insertion (ref side). Backtrace prefers the diagonal on ties, so a
    substitution wins over an insert+delete pair.
    """
    n, m = len(ref), len(hyp)
    dist = np.zeros((n + 1, m + 1), dtype=np.int64)
    dist[:, 0] = np.arange(n + 1)
    dist[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            dist[i, j] = min(sub, dist[i - 1, j] + 1, dist[i, j - 1] + 1)
    pairs: list[tuple[str | None, str | None]] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            pairs.append((ref[i - 1], hyp[j - 1]))
            i, j = i - 1, j - 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            pairs.append((ref[i - 1], None))
            i -= 1
        else:
            pairs.append((None, hyp[j - 1]))
            j -= 1
    return pairs[::-1]


def build_confusions(pairs: Iterable[tuple[Sequence[str], Sequence[str]]]) -> ConfusionDictionary:
    """Count aligned ``ref -> hyp`` substitutions over (hypothesis, reference) pairs."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("build_confusions needs a non-empty corpus")
    counts: dict[str, Counter] = defaultdict(Counter)
    for hyp, ref in pairs:
        for r, h in align(ref, hyp):
            if r is not None and h is not None and r != h:
                counts[r][h] += 1
    return ConfusionDictionary({src: dict(c) for src, c in counts.items()})
