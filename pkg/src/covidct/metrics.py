"""Segmentation and diagnosis metrics.

COVID is the positive class throughout. Any precision, recall or F1 whose
denominator is zero is reported as 0.0, so macro F1 is always defined.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgument
from .imaging import Mask
from .pipeline import PatientDecision
from .scan import Label


def dice(a: Mask, b: Mask) -> float:
    """``2|A & B| / (|A| + |B|)``; two empty masks score 1.0."""
    if a.shape != b.shape:
        raise InvalidArgument(f"mask sizes differ: {a.shape} vs {b.shape}")
    na, nb = a.count(), b.count()
    if na + nb == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a.bits & b.bits)) / (na + nb)


def dice_summary(pairs) -> tuple[float, float]:
    """(average, minimum) dice over ``(predicted, truth)`` pairs."""
    scores = [dice(p, t) for p, t in pairs]
    if not scores:
        raise InvalidArgument("dice_summary needs at least one pair")
    return sum(scores) / len(scores), min(scores)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidArgument("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the roles of the two classes exchanged."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, tn=self.tp, fn=self.fp)


def _as_label(item) -> Label:
    if isinstance(item, PatientDecision):
        return item.verdict
    if isinstance(item, Label):
        return item
    if isinstance(item, str):
        return Label.parse(item)
    raise InvalidArgument(f"cannot interpret {item!r} as a label")


def confusion(predictions, truths) -> ConfusionCounts:
    predictions, truths = list(predictions), list(truths)
    if len(predictions) != len(truths):
        raise InvalidArgument(
            f"{len(predictions)} predictions but {len(truths)} ground-truth labels")
    tp = fp = tn = fn = 0
    for p, t in zip(predictions, truths):
        p, t = _as_label(p), _as_label(t)
        if p is Label.COVID:
            if t is Label.COVID:
                tp += 1
            else:
                fp += 1
        elif t is Label.COVID:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(tp: int, fp: int, fn: int) -> float:
    return _ratio(2 * tp, 2 * tp + fp + fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1_positive: float
    f1_negative: float
    macro_f1: float
    ci_halfwidth: float
    n: int

    def as_dict(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        rows = [
            ("accuracy", self.accuracy),
            ("precision (COVID)", self.precision),
            ("recall (COVID)", self.recall),
            ("F1 COVID", self.f1_positive),
            ("F1 non-COVID", self.f1_negative),
            ("macro F1", self.macro_f1),
            ("macro F1 95% CI +/-", self.ci_halfwidth),
        ]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {value:.4f}" for name, value in rows]
        lines.append(f"{'n':<{width}}  {self.n}")
        return "\n".join(lines)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key, value in self.as_dict().items():
                writer.writerow([key, value])


def report(c: ConfusionCounts, z: float = 1.96) -> MetricsReport:
    if c.total == 0:
        raise InvalidArgument("cannot report on an empty confusion matrix")
    f1_pos = _f1(c.tp, c.fp, c.fn)
    f1_neg = _f1(c.tn, c.fn, c.fp)
    macro = (f1_pos + f1_neg) / 2.0
    return MetricsReport(
        accuracy=(c.tp + c.tn) / c.total,
        precision=_ratio(c.tp, c.tp + c.fp),
        recall=_ratio(c.tp, c.tp + c.fn),
        f1_positive=f1_pos,
        f1_negative=f1_neg,
        macro_f1=macro,
        ci_halfwidth=wald_ci(macro, c.total, z),
        n=c.total,
    )


def wald_ci(score: float, n: int, z: float = 1.96) -> float:
    """Half-width ``z * sqrt(score * (1 - score) / n)`` of a Wald interval."""
    if n <= 0:
        raise InvalidArgument("wald_ci needs n > 0")
    if not 0.0 <= score <= 1.0:
        raise InvalidArgument(f"score must lie in [0, 1], got {score}")
    return z * math.sqrt(score * (1.0 - score) / n)


def write_dice_csv(rows, path) -> None:
    """Rows of ``(method, avg_dice, min_dice)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "avg_dice", "min_dice"])
        for method, avg, low in rows:
            writer.writerow([method, f"{avg:.6f}", f"{low:.6f}"])
