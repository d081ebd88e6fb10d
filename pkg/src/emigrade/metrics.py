"""PSNR and per-class classification metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .synth import LEVELS, Frame


@dataclass(frozen=True)
class PsnrResult:
    """PSNR in dB, or ``value_db is None`` when the images are identical."""

    value_db: float | None

    @property
    def identical(self) -> bool:
        return self.value_db is None

    def __str__(self):
        return "identical" if self.identical else f"{self.value_db:.4f} dB"


def _as_array(img) -> np.ndarray:
    if isinstance(img, Frame):
        return img.stack()
    return np.asarray(img)


def psnr(a, b, max_value: float = 255.0) -> PsnrResult:
    """``10*log10(max^2 / MSE)``, MSE taken jointly over every sample (all planes of a Frame)."""
    if max_value <= 0:
        raise ValueError("max_value must be positive")
    x, y = _as_array(a), _as_array(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    diff = x.astype(np.float64) - y.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return PsnrResult(None)
    return PsnrResult(10 * math.log10(max_value ** 2 / mse))


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows = true level, columns = predicted
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    accuracy: float
    absent: np.ndarray  # class seen in neither truths nor predictions
    labels: tuple[int, ...] = LEVELS

    @property
    def total(self) -> int:
        return int(self.confusion.sum())

    @property
    def support(self) -> np.ndarray:
        return self.confusion.sum(axis=1)

    def table(self, title: str | None = None) -> str:
        lines = [title] if title else []
        lines.append(f"{'Category':<10}{'Precision':>10}{'Recall':>10}{'F1-Score':>10}{'Support':>9}")
        for i, lv in enumerate(self.labels):
            flag = "  (absent)" if self.absent[i] else ""
            lines.append(f"{'Level ' + str(lv):<10}{self.precision[i]:>10.2f}{self.recall[i]:>10.2f}"
                         f"{self.f1[i]:>10.2f}{self.support[i]:>9d}{flag}")
        lines.append(f"{'Accuracy':<10}{'':>20}{self.accuracy:>10.2f}{self.total:>9d}")
        return "\n".join(lines) + "\n"

    def delimited(self, sep: str = "\t") -> str:
        rows = [sep.join(["category", "precision", "recall", "f1", "support", "absent"])]
        for i, lv in enumerate(self.labels):
            rows.append(sep.join([f"level{lv}", f"{self.precision[i]:.6f}", f"{self.recall[i]:.6f}",
                                  f"{self.f1[i]:.6f}", str(self.support[i]), str(int(self.absent[i]))]))
        rows.append(sep.join(["accuracy", "", "", f"{self.accuracy:.6f}", str(self.total), "0"]))
        return "\n".join(rows) + "\n"

    def confusion_grid(self, sep: str = "\t") -> str:
        rows = [sep.join(["true\\pred"] + [f"level{lv}" for lv in self.labels])]
        for lv, row in zip(self.labels, self.confusion):
            rows.append(sep.join([f"level{lv}"] + [str(int(v)) for v in row]))
        return "\n".join(rows) + "\n"


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def confusion_matrix(predictions: Sequence[int], truths: Sequence[int],
                     labels: Sequence[int] = LEVELS) -> np.ndarray:
    index = {lv: i for i, lv in enumerate(labels)}
    cm = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for p, t in zip(predictions, truths):
        if p not in index or t not in index:
            raise ValueError(f"unknown label in pair (pred={p}, true={t})")
        cm[index[t], index[p]] += 1
    return cm


def report_from_confusion(cm: np.ndarray, labels: Sequence[int] = LEVELS) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, actual)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    accuracy = float(tp.sum() / cm.sum())
    return MetricsReport(cm, precision, recall, f1, accuracy,
                         (predicted == 0) & (actual == 0), tuple(labels))


def classification_report(predictions: Sequence[int], truths: Sequence[int],
                          labels: Sequence[int] = LEVELS) -> MetricsReport:
    """Per-class precision/recall/F1, pooled accuracy and confusion matrix.

    Undefined ratios (empty row or column) are reported as 0; classes absent
    from both inputs are flagged in ``absent``.
    """
    if len(predictions) != len(truths):
        raise ValueError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if len(truths) == 0:
        raise ValueError("nothing to evaluate")
    return report_from_confusion(confusion_matrix(predictions, truths, labels), labels)
