"""Classification metrics over a fixed class list."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    per_class: dict[str, dict[str, float]]
    confusion: list[list[int]]  # rows gold, cols predicted, class-list order
    classes: list[str]
    n: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "weighted_f1": self.weighted_f1,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "classes": self.classes,
            "n": self.n,
        }
        if self.extra:
            d["extra"] = self.extra
        return d


def compute_metrics(gold, predicted, classes) -> MetricsReport:
    """Accuracy, per-class precision/recall/F1, macro and support-weighted F1.

    A class with zero precision + recall gets F1 0. Classes absent from
    gold still occupy confusion-matrix rows and count into the macro
    average (their F1 is 0 unless never predicted either).
    """
    gold = list(gold)
    predicted = list(predicted)
    if len(gold) != len(predicted):
        raise ValueError(f"gold has {len(gold)} items, predicted has {len(predicted)}")
    if not gold:
        raise ValueError("cannot score an empty sample list")
    classes = list(classes)
    index = {c: i for i, c in enumerate(classes)}
    for y in gold:
        if y not in index:
            raise ValueError(f"gold label {y!r} not in class list")
    for y in predicted:
        if y not in index:
            raise ValueError(f"predicted label {y!r} not in class list")

    m = len(classes)
    confusion = np.zeros((m, m), dtype=int)
    for g, p in zip(gold, predicted):
        confusion[index[g], index[p]] += 1

    tp = np.diag(confusion).astype(float)
    support = confusion.sum(axis=1).astype(float)
    pred_count = confusion.sum(axis=0).astype(float)

    with np.errstate(invalid="ignore", divide="ignore"):
        precision = np.where(pred_count > 0, tp / pred_count, 0.0)
        recall = np.where(support > 0, tp / support, 0.0)
        pr = precision + recall
        f1 = np.where(pr > 0, 2.0 * precision * recall / np.where(pr > 0, pr, 1.0), 0.0)

    accuracy = float(tp.sum() / len(gold))
    macro_f1 = float(np.mean(f1))
    weighted_f1 = float(np.sum(f1 * support) / support.sum())

    per_class = {
        c: {
            "precision": float(precision[i]),
            "recall": float(recall[i]),
            "f1": float(f1[i]),
            "support": int(support[i]),
        }
        for i, c in enumerate(classes)
    }
    return MetricsReport(
        accuracy=accuracy,
        macro_f1=macro_f1,
        weighted_f1=weighted_f1,
        per_class=per_class,
        confusion=confusion.tolist(),
        classes=classes,
        n=len(gold),
    )


def micro_f1(gold, predicted, classes) -> float:
    """Micro-averaged F1: pooled TP/FP/FN over all classes.

    With single-label classification every false positive is another
    class's false negative, so this always equals accuracy; exposed
    separately so that identity can be checked rather than assumed.
    """
    report = compute_metrics(gold, predicted, classes)
    confusion = np.asarray(report.confusion)
    tp = np.diag(confusion).sum()
    fp = confusion.sum() - tp
    fn = confusion.sum() - tp
    denom = 2 * tp + fp + fn
    return float(2 * tp / denom) if denom else 0.0
