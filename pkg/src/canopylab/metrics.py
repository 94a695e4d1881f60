"""Binary segmentation accuracy: confusion counts, precision, recall, F1, IoU.

Counts are global over all cells valid in both masks (micro-averaging).  A
metric whose denominator is zero is reported as 0.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .raster import BinaryMask, require_same_grid


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f1: float
    iou: float


def confusion(pred: BinaryMask, truth: BinaryMask) -> ConfusionCounts:
    require_same_grid(pred.spec, truth.spec, "prediction and truth masks")
    both = pred.valid & truth.valid
    p = pred.bits & both
    t = truth.bits & both
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t & both))
    tn = int(np.count_nonzero(both)) - tp - fp - fn
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def metrics(counts: ConfusionCounts) -> MetricsReport:
    tp, fp, fn = counts.tp, counts.fp, counts.fn
    return MetricsReport(
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        iou=_ratio(tp, tp + fp + fn),
    )


def evaluate(pred: BinaryMask, truth: BinaryMask) -> tuple[ConfusionCounts, MetricsReport]:
    counts = confusion(pred, truth)
    return counts, metrics(counts)


def report_dict(counts: ConfusionCounts, report: MetricsReport) -> dict:
    """Flat JSON-ready record of the four metrics and four counts."""
    return {**asdict(report), **asdict(counts)}
