"""Exact-match evaluation with the ASR-error breakdown."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from ..corpus import Example


def exact_match(pred: Sequence[str], target: Sequence[str]) -> bool:
    return list(pred) == list(target)


@dataclass
class EvalReport:
    em_total: float
    em_no_asr_error: float
    em_asr_error: float
    n_total: int
    n_no_asr_error: int
    n_asr_error: int
    records: list[dict] = field(default_factory=list)

    @classmethod
    def from_matches(cls, examples: Sequence[Example], preds: Sequence[Sequence[str]]) -> "EvalReport":
        records = []
        for ex, pred in zip(examples, preds):
            records.append({"example_id": ex.id, "bucket": "asr_error" if ex.had_asr_error else "clean",
                            "target": " ".join(ex.parse), "prediction": " ".join(pred),
                            "match": exact_match(pred, ex.parse)})
        err = [r["match"] for r in records if r["bucket"] == "asr_error"]
        clean = [r["match"] for r in records if r["bucket"] == "clean"]

        def frac(xs):
            return sum(xs) / len(xs) if xs else 0.0

        return cls(frac(err + clean), frac(clean), frac(err), len(records), len(clean), len(err), records)

    def summary(self) -> str:
        return (f"EM {100 * self.em_total:.2f} (n={self.n_total}) | "
                f"no ASR error {100 * self.em_no_asr_error:.2f} (n={self.n_no_asr_error}) | "
                f"ASR error {100 * self.em_asr_error:.2f} (n={self.n_asr_error})")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["example_id", "bucket", "match"])
            for r in self.records:
                w.writerow([r["example_id"], r["bucket"], int(r["match"])])


def evaluate(model, examples: Sequence[Example], batch_size: int = 128) -> EvalReport:
    """Decode every example with ``model.predict`` and bucket exact matches by ASR error."""
    preds = model.predict(list(examples), batch_size=batch_size)
    return EvalReport.from_matches(examples, preds)


class OracleModel:
    """Predicts the gold parse; used to sanity-check the evaluation path."""

    mode = "oracle"

    def predict(self, examples, batch_size: int = 128):
        return [list(ex.parse) for ex in examples]


class ConstantModel:
    def __init__(self, output: Sequence[str] = ()):
        self.output = list(output)

    def predict(self, examples, batch_size: int = 128):
        return [list(self.output) for _ in examples]
