"""Confusion-matrix metrics (OA, AA, Cohen's kappa), per-class reports and scene maps.

Rows of a confusion matrix are ground truth, columns are predictions.  All
scores are percentages.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .hsi_io import ClassMap, HSICube, LabelRaster
from .tiler import extract_tiles, pad_cube

_MODULE = "metrics"


@dataclass
class ConfusionMatrix:
    counts: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1] or counts.shape[0] == 0:
            raise ValidationError(f"confusion matrix must be square K x K, got shape {counts.shape}", _MODULE)
        if counts.dtype.kind not in "iu":
            if not np.all(counts == np.round(counts)):
                raise ValidationError("confusion matrix entries must be integers", _MODULE)
        if np.any(counts < 0):
            raise ValidationError("confusion matrix entries must be >= 0", _MODULE)
        self.counts = counts.astype(np.int64)
        if not self.class_names:
            self.class_names = [f"class_{k}" for k in range(1, self.num_classes + 1)]
        if len(self.class_names) != self.num_classes:
            raise ValidationError(f"{len(self.class_names)} class names for {self.num_classes} classes", _MODULE)

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def from_labels(cls, truth, predicted, num_classes, class_names=None) -> "ConfusionMatrix":
        """Build from 1-based label vectors."""
        truth = np.asarray(truth, dtype=np.int64) - 1
        predicted = np.asarray(predicted, dtype=np.int64) - 1
        flat = np.bincount(truth * num_classes + predicted, minlength=num_classes * num_classes)
        return cls(flat.reshape(num_classes, num_classes), list(class_names or []))


def _require_total(cm: ConfusionMatrix) -> None:
    if cm.total <= 0:
        raise ValidationError("confusion matrix is empty (total = 0)", _MODULE)


def overall_accuracy(cm: ConfusionMatrix) -> float:
    _require_total(cm)
    return 100.0 * np.trace(cm.counts) / cm.total


def class_recalls(cm: ConfusionMatrix) -> np.ndarray:
    """Per-class recall in percent; NaN for classes with no ground-truth samples."""
    rows = cm.counts.sum(axis=1)
    diag = np.diag(cm.counts).astype(np.float64)
    out = np.full(cm.num_classes, np.nan)
    nz = rows > 0
    out[nz] = 100.0 * diag[nz] / rows[nz]
    return out


def average_accuracy(cm: ConfusionMatrix) -> float:
    _require_total(cm)
    recalls = class_recalls(cm)
    return float(np.mean(recalls[~np.isnan(recalls)]))


def cohen_kappa(cm: ConfusionMatrix) -> float:
    _require_total(cm)
    total = float(cm.total)
    p_o = np.trace(cm.counts) / total
    p_e = float(np.sum(cm.counts.sum(axis=1).astype(np.float64) * cm.counts.sum(axis=0))) / total**2
    if p_e == 1.0:
        if p_o == 1.0:
            return 100.0
        raise ValidationError("kappa undefined: chance agreement is 1 but observed agreement is not", _MODULE)
    return 100.0 * (p_o - p_e) / (1.0 - p_e)


def summary_line(cm: ConfusionMatrix) -> str:
    return f"OA: {overall_accuracy(cm):.2f}  Kappa: {cohen_kappa(cm):.2f}  AA: {average_accuracy(cm):.2f}"


def per_class_report(cm: ConfusionMatrix) -> str:
    lines = ["Accuracy by target (in percentages):"]
    for name, recall in zip(cm.class_names, class_recalls(cm)):
        value = "n/a" if np.isnan(recall) else f"{recall:.4f}"
        lines.append(f"{value:>8} : {name}")
    return "\n".join(lines)


def confusion_csv(cm: ConfusionMatrix) -> str:
    lines = ["truth\\predicted," + ",".join(cm.class_names)]
    for name, row in zip(cm.class_names, cm.counts):
        lines.append(name + "," + ",".join(str(int(v)) for v in row))
    return "\n".join(lines) + "\n"


def format_report(cm: ConfusionMatrix, title: str | None = None) -> str:
    parts = []
    if title:
        parts.append(title)
    parts += [
        f"OA    = {overall_accuracy(cm):.2f}",
        f"Kappa = {cohen_kappa(cm):.2f}",
        f"AA    = {average_accuracy(cm):.2f}",
        f"Samples = {cm.total}",
        "",
        per_class_report(cm),
    ]
    return "\n".join(parts) + "\n"


def write_report(cm: ConfusionMatrix, report_path, csv_path, title: str | None = None) -> None:
    Path(report_path).write_text(format_report(cm, title))
    Path(csv_path).write_text(confusion_csv(cm))


def classify_scene(model, cube: HSICube, labels: LabelRaster | None, window: int,
                   mask_background: bool = False, batch_size: int = 256) -> ClassMap:
    """Predict a class for every pixel (or only labeled ones when masking) by tiling the cube.

    Predictions are 1-based; argmax ties go to the lowest class index.
    """
    h, w = cube.height, cube.width
    if labels is not None and labels.shape != (h, w):
        raise ValidationError(f"labels are {labels.shape}, cube is {h}x{w}", _MODULE)
    if mask_background:
        if labels is None:
            raise ValidationError("masking the background needs a label raster", _MODULE)
        rows, cols = np.nonzero(labels.labels)
    else:
        rows, cols = np.divmod(np.arange(h * w), w)
    out = np.zeros((h, w), dtype=np.uint16)
    padded = pad_cube(cube.data, window)
    for start in range(0, rows.size, batch_size):
        r, c = rows[start:start + batch_size], cols[start:start + batch_size]
        tiles = extract_tiles(cube.data, r, c, window, padded=padded)
        probs = model.forward(tiles, training=False)
        out[r, c] = np.argmax(probs, axis=1) + 1
    return ClassMap(out, model.spec.num_classes)
