from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DimensionMismatch, EmptyTestSet


@dataclass(frozen=True)
class Metrics:
    """Binary classification metrics with class 1 as the positive class.

    Empty denominators follow the "nothing to get wrong" convention:
    precision is 1.0 with no positive predictions, recall is 1.0 with no
    positive labels, and F1 is 0.0 when precision + recall is 0.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_counts(cls, tp, fp, fn, tn):
        total = tp + fp + fn + tn
        if total == 0:
            raise EmptyTestSet("no predictions to score")
        accuracy = (tp + tn) / total
        precision = tp / (tp + fp) if tp + fp else 1.0
        recall = tp / (tp + fn) if tp + fn else 1.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(accuracy, precision, recall, f1, int(tp), int(fp), int(fn), int(tn))

    @classmethod
    def from_predictions(cls, predicted, labels):
        p = np.asarray(predicted).astype(bool)
        t = np.asarray(labels).astype(bool)
        if p.shape != t.shape:
            raise DimensionMismatch(f"{p.shape} predictions vs {t.shape} labels")
        if p.size == 0:
            raise EmptyTestSet("no predictions to score")
        tp = int(np.sum(p & t))
        fp = int(np.sum(p & ~t))
        fn = int(np.sum(~p & t))
        tn = int(np.sum(~p & ~t))
        return cls.from_counts(tp, fp, fn, tn)

    def as_dict(self):
        return asdict(self)
