"""Confusion-matrix mIoU."""

from __future__ import annotations

import numpy as np

from .losses import IGNORE_INDEX


class MIoUAccumulator:
    """``confusion[gt, pred]`` counts over all scored pixels."""

    def __init__(self, num_classes: int, ignore_index: int = IGNORE_INDEX):
        self.num_classes = num_classes
        self.ignore_index = ignore_index
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    def update(self, pred: np.ndarray, label: np.ndarray) -> None:
        pred = np.asarray(pred).astype(np.int64).ravel()
        label = np.asarray(label).astype(np.int64).ravel()
        if pred.shape != label.shape:
            raise ValueError(f"prediction {pred.shape} and label {label.shape} differ")
        keep = label != self.ignore_index
        pred, label = pred[keep], label[keep]
        n = self.num_classes
        if label.size and (label.max() >= n or pred.max() >= n or pred.min() < 0):
            raise ValueError(f"class index outside [0, {n})")
        self.confusion += np.bincount(n * label + pred, minlength=n * n).reshape(n, n)

    @property
    def total(self) -> int:
        return int(self.confusion.sum())


def compute_miou(acc: MIoUAccumulator) -> tuple[float, np.ndarray]:
    """Mean IoU over classes with a non-empty union, and per-class IoU (NaN if excluded)."""
    cm = acc.confusion
    tp = np.diag(cm).astype(np.float64)
    union = cm.sum(axis=0) + cm.sum(axis=1) - np.diag(cm)
    present = union > 0
    if not present.any():
        raise ValueError("mIoU undefined: no class has any ground-truth or predicted pixel")
    iou = np.full(cm.shape[0], np.nan)
    iou[present] = tp[present] / union[present]
    return float(iou[present].mean()), iou
