"""Binary classification metrics with the sarcastic class as positive."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class MetricsReport:
    f1: float
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_counts(cls, tp: int, fp: int, fn: int, tn: int) -> "MetricsReport":
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        total = tp + fp + fn + tn
        accuracy = (tp + tn) / total if total else 0.0
        return cls(f1, precision, recall, accuracy, tp, fp, fn, tn)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**{k: d[k] for k in ("f1", "precision", "recall", "accuracy", "tp", "fp", "fn", "tn")})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))

    def table(self) -> str:
        rows = [("f1", f"{self.f1:.4f}"), ("precision", f"{self.precision:.4f}"),
                ("recall", f"{self.recall:.4f}"), ("accuracy", f"{self.accuracy:.4f}"),
                ("tp/fp/fn/tn", f"{self.tp}/{self.fp}/{self.fn}/{self.tn}")]
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k:<{width}}  {v}" for k, v in rows)


def compute_metrics(predictions: Sequence[int], labels: Sequence[int]) -> MetricsReport:
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(labels, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ContractError(f"{pred.size} predictions for {gold.size} labels")
    if pred.size == 0:
        raise ContractError("cannot score an empty prediction list")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    tn = int(np.sum((pred == 0) & (gold == 0)))
    return MetricsReport.from_counts(tp, fp, fn, tn)
