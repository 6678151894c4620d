"""Accuracy, precision, recall and F1 over thresholded probabilities."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class MetricsReport:
    acc: float
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"acc": self.acc, "precision": self.precision, "recall": self.recall,
                "f1": self.f1, "counts": asdict(self.counts), "flags": list(self.flags)}


def confusion(predictions: Sequence[float], labels: Sequence[int],
              threshold: float = 0.5) -> ConfusionCounts:
    p = np.asarray(predictions, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if p.shape != y.shape:
        raise ValueError(f"{len(p)} predictions but {len(y)} labels")
    pred = p >= threshold
    truth = y == 1
    return ConfusionCounts(
        tp=int(np.sum(pred & truth)),
        tn=int(np.sum(~pred & ~truth)),
        fp=int(np.sum(pred & ~truth)),
        fn=int(np.sum(~pred & truth)),
    )


def metrics(c: ConfusionCounts) -> MetricsReport:
    """Metrics from counts; an undefined ratio is reported as 0 and flagged."""
    flags = []

    def ratio(num, den, name):
        if den == 0:
            flags.append(f"{name}_undefined")
            return 0.0
        return num / den

    acc = ratio(c.tp + c.tn, c.total, "acc")
    precision = ratio(c.tp, c.tp + c.fp, "precision")
    recall = ratio(c.tp, c.tp + c.fn, "recall")
    f1 = ratio(2 * precision * recall, precision + recall, "f1")
    return MetricsReport(acc, precision, recall, f1, c, flags)


def evaluate_predictions(predictions, labels, threshold: float = 0.5) -> MetricsReport:
    return metrics(confusion(predictions, labels, threshold))
