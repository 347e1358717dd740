"""Binary crack/background confusion accumulation and segmentation metrics."""

from dataclasses import dataclass
from typing import Iterable

import numpy as np
from pydantic import BaseModel

from ..core.errors import DataError, ShapeError

CSV_HEADER = "miou,precision,recall,f1"


@dataclass
class ConfusionMatrix:
    """Pixel counts for the crack class (class 1)."""

    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def update(self, pred: np.ndarray, label: np.ndarray) -> "ConfusionMatrix":
        """Accumulate one prediction/label pair of equal shape."""
        pred = np.asarray(pred)
        label = np.asarray(label)
        if pred.shape != label.shape:
            raise ShapeError(f"prediction {pred.shape} and label {label.shape} extents differ")
        for name, values in (("prediction", pred), ("label", label)):
            if values.size and not np.isin(values, (0, 1)).all():
                raise DataError(f"{name} holds values other than 0 and 1")
        p = pred.astype(bool)
        t = label.astype(bool)
        self.tp += int(np.count_nonzero(p & t))
        self.fp += int(np.count_nonzero(p & ~t))
        self.fn += int(np.count_nonzero(~p & t))
        self.tn += int(np.count_nonzero(~p & ~t))
        return self

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(
            tp=self.tp + other.tp,
            fp=self.fp + other.fp,
            fn=self.fn + other.fn,
            tn=self.tn + other.tn,
        )

    @classmethod
    def merged(cls, shards: Iterable["ConfusionMatrix"]) -> "ConfusionMatrix":
        result = cls()
        for shard in shards:
            result = result.merge(shard)
        return result


class SegmentationMetrics(BaseModel):
    miou: float
    precision: float
    recall: float
    f1: float
    iou_crack: float
    iou_background: float

    def csv_row(self) -> str:
        return f"{self.miou:.6f},{self.precision:.6f},{self.recall:.6f},{self.f1:.6f}"

    def report(self) -> str:
        return "\n".join(
            [
                f"mIoU:           {self.miou:.4f}",
                f"IoU crack:      {self.iou_crack:.4f}",
                f"IoU background: {self.iou_background:.4f}",
                f"precision:      {self.precision:.4f}",
                f"recall:         {self.recall:.4f}",
                f"F1:             {self.f1:.4f}",
            ]
        )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _iou(hits: int, misses: int) -> float:
    # a class absent from both prediction and label is matched perfectly
    return hits / (hits + misses) if hits + misses else 1.0


def compute(cm: ConfusionMatrix) -> SegmentationMetrics:
    """Derive IoU, precision, recall and F1 from accumulated counts."""
    if cm.total == 0:
        raise DataError("cannot compute metrics from an empty confusion matrix")
    iou_crack = _iou(cm.tp, cm.fp + cm.fn)
    iou_background = _iou(cm.tn, cm.fp + cm.fn)
    precision = _ratio(cm.tp, cm.tp + cm.fp)
    recall = _ratio(cm.tp, cm.tp + cm.fn)
    f1 = _ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn)
    return SegmentationMetrics(
        miou=(iou_crack + iou_background) / 2,
        precision=precision,
        recall=recall,
        f1=f1,
        iou_crack=iou_crack,
        iou_background=iou_background,
    )
