"""Point-wise confusion matrix and IoU / accuracy summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ConfusionMatrix:
    """K x K counts; rows are ground truth, columns are predictions."""

    def __init__(self, num_classes: int):
        if num_classes < 1:
            raise ValueError("need at least one class")
        self.num_classes = num_classes
        self.counts = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, truth: np.ndarray, pred: np.ndarray) -> None:
        truth = np.asarray(truth, dtype=np.int64).reshape(-1)
        pred = np.asarray(pred, dtype=np.int64).reshape(-1)
        if truth.shape != pred.shape:
            raise ValueError(f"shape mismatch: {truth.shape} vs {pred.shape}")
        k = self.num_classes
        if truth.size and (truth.min() < 0 or truth.max() >= k
                           or pred.min() < 0 or pred.max() >= k):
            raise ValueError(f"labels outside [0, {k})")
        np.add.at(self.counts, (truth, pred), 1)

    def merge(self, other: "ConfusionMatrix") -> None:
        if other.num_classes != self.num_classes:
            raise ValueError("class-count mismatch")
        self.counts += other.counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class IouReport:
    per_class: tuple[float, ...]
    miou: float
    macc: float


def compute_iou(cm: ConfusionMatrix) -> IouReport:
    """IoU_c = TP / (TP + FP + FN); zero-denominator classes count as 0 in
    the mean. mAcc averages per-class recall over classes that appear in the
    ground truth."""
    c = cm.counts
    tp = np.diag(c).astype(np.float64)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    denom = tp + fp + fn
    iou = np.where(denom > 0, tp / np.where(denom > 0, denom, 1), 0.0)

    row_tot = c.sum(axis=1).astype(np.float64)
    present = row_tot > 0
    recalls = tp[present] / row_tot[present]
    macc = float(recalls.mean()) if present.any() else 0.0
    return IouReport(per_class=tuple(float(v) for v in iou),
                     miou=float(iou.mean()), macc=macc)
