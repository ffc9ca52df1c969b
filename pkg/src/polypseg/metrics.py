"""Threshold, confusion counts, and the derived overlap metrics.

Every metric is a pure function of (tp, fp, tn, fn). When a metric's
denominator is zero it returns 1.0 if tp == fp == fn == 0 (both masks empty,
a vacuously perfect match) and 0.0 otherwise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, ValidationError
from .tensor import Tensor

CSV_FIELDS = ("image_id", "dice", "miou", "precision", "recall", "accuracy",
              "tp", "fp", "tn", "fn")


def _as_array(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x)


def binarize(prob, threshold: float = 0.5) -> np.ndarray:
    """Probabilities >= threshold become 1, the rest 0."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    arr = _as_array(prob)
    return (arr >= threshold).astype(np.uint8)


def _check_binary_pair(pred, gt):
    pred, gt = _as_array(pred), _as_array(gt)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if pred.size == 0:
        raise DimensionError("empty masks")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if not np.all((arr == 0) | (arr == 1)):
            raise ValidationError(f"{name} mask must be binary")
    return pred.astype(bool), gt.astype(bool)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def confusion_counts(pred, gt) -> ConfusionCounts:
    pred, gt = _check_binary_pair(pred, gt)
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return ConfusionCounts(tp, fp, tn, fn)


def _ratio(num: int, den: int, counts: ConfusionCounts) -> float:
    if den == 0:
        return 1.0 if counts.tp == 0 and counts.fp == 0 and counts.fn == 0 else 0.0
    return num / den


def dice_coefficient(counts: ConfusionCounts) -> float:
    return _ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn, counts)


def mean_iou(counts: ConfusionCounts) -> float:
    """Foreground intersection over union."""
    return _ratio(counts.tp, counts.tp + counts.fp + counts.fn, counts)


def precision(counts: ConfusionCounts) -> float:
    return _ratio(counts.tp, counts.tp + counts.fp, counts)


def recall(counts: ConfusionCounts) -> float:
    return _ratio(counts.tp, counts.tp + counts.fn, counts)


def accuracy(counts: ConfusionCounts) -> float:
    if counts.total == 0:
        raise DimensionError("accuracy of empty masks")
    return (counts.tp + counts.tn) / counts.total


@dataclass(frozen=True)
class MetricsReport:
    dice: float
    miou: float
    precision: float
    recall: float
    accuracy: float


def compute_metrics(counts: ConfusionCounts) -> MetricsReport:
    return MetricsReport(
        dice=dice_coefficient(counts),
        miou=mean_iou(counts),
        precision=precision(counts),
        recall=recall(counts),
        accuracy=accuracy(counts),
    )


def xor_error_map(pred, gt) -> np.ndarray:
    """Binary map of disagreeing pixels; its sum equals fp + fn."""
    pred, gt = _check_binary_pair(pred, gt)
    return (pred ^ gt).astype(np.uint8)


def macro_average(reports) -> MetricsReport:
    reports = list(reports)
    if not reports:
        raise ConfigError("macro average of zero reports")
    n = len(reports)
    return MetricsReport(
        dice=sum(r.dice for r in reports) / n,
        miou=sum(r.miou for r in reports) / n,
        precision=sum(r.precision for r in reports) / n,
        recall=sum(r.recall for r in reports) / n,
        accuracy=sum(r.accuracy for r in reports) / n,
    )


def write_metrics_csv(path, rows, macro: MetricsReport) -> None:
    """rows: iterable of (image_id, MetricsReport, ConfusionCounts)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for image_id, report, counts in rows:
            writer.writerow([
                image_id,
                f"{report.dice:.6f}", f"{report.miou:.6f}", f"{report.precision:.6f}",
                f"{report.recall:.6f}", f"{report.accuracy:.6f}",
                counts.tp, counts.fp, counts.tn, counts.fn,
            ])
        writer.writerow([
            "MACRO",
            f"{macro.dice:.6f}", f"{macro.miou:.6f}", f"{macro.precision:.6f}",
            f"{macro.recall:.6f}", f"{macro.accuracy:.6f}",
            "", "", "", "",
        ])
