"""Meter-space error metrics, classification accuracy and plot-data export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Scan
from .models import Localizer
from .training import NormStats

PLOT_COLUMNS = ("scan_id", "true_x", "true_y", "true_floor", "pred_x", "pred_y", "pred_floor", "error_m")


def euclidean_error(pred_m, truth_m) -> float:
    return math.hypot(float(pred_m[0]) - float(truth_m[0]), float(pred_m[1]) - float(truth_m[1]))


@dataclass
class Metrics:
    mean_error_m: float
    std_error_m: float
    per_scan_errors: list[float]
    class_accuracy: float | None = None
    predictions: list[tuple[float, float]] = field(default_factory=list, repr=False)
    predicted_classes: list = field(default_factory=list, repr=False)

    @classmethod
    def from_errors(cls, errors: Sequence[float], **kwargs) -> "Metrics":
        """Population mean and std; correctly rounded sums make both order-free."""
        errs = [float(e) for e in errors]
        if not errs:
            raise ValueError("no errors to summarize")
        mean = math.fsum(errs) / len(errs)
        std = math.sqrt(math.fsum((e - mean) ** 2 for e in errs) / len(errs))
        return cls(mean, std, errs, **kwargs)

    def summary(self) -> str:
        text = f"{self.mean_error_m:.2f} ± {self.std_error_m:.2f} m"
        if self.class_accuracy is not None:
            text += f" (class accuracy {self.class_accuracy:.3f})"
        return text


def evaluate(model: Localizer, test: Sequence[Scan], stats: NormStats, *,
             classes: Sequence | None = None, class_field: str = "none") -> Metrics:
    """Denormalize predictions and score them against meter-space truth.

    Accuracy is reported when the model has a class head and ``classes`` maps
    logit indices to tag values.
    """
    if not test:
        raise ValueError("test set is empty")
    errors, preds, pred_classes = [], [], []
    correct = 0
    for scan in test:
        out = model(scan)
        xy = stats.denormalize(out.xy)
        preds.append((float(xy[0]), float(xy[1])))
        errors.append(euclidean_error(xy, scan.position))
        if out.class_logits is not None and classes:
            label = classes[int(np.argmax(out.class_logits.data))]
            pred_classes.append(label)
            correct += label == scan.tag(class_field)
    accuracy = correct / len(test) if pred_classes else None
    return Metrics.from_errors(errors, class_accuracy=accuracy, predictions=preds,
                               predicted_classes=pred_classes)


def _cell(v) -> str:
    if v is None:
        return ""
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def export_plot_data(model: Localizer, test: Sequence[Scan], stats: NormStats, out_path, *,
                     classes: Sequence | None = None, class_field: str = "none") -> Metrics:
    """One row per test scan with truth, prediction and error for scatter overlays.

    ``pred_floor`` is filled only for models that classify floors.
    """
    metrics = evaluate(model, test, stats, classes=classes, class_field=class_field)
    with Path(out_path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PLOT_COLUMNS)
        for i, scan in enumerate(test):
            px, py = metrics.predictions[i]
            pred_floor = (metrics.predicted_classes[i]
                          if metrics.predicted_classes and class_field == "floor" else None)
            writer.writerow([scan.scan_id or str(i), _cell(float(scan.position[0])),
                             _cell(float(scan.position[1])), _cell(scan.floor),
                             _cell(px), _cell(py), _cell(pred_floor), _cell(metrics.per_scan_errors[i])])
    return metrics


def read_plot_data(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


REPORT_COLUMNS = ("experiment", "model", "n_test", "mean_error_m", "std_error_m", "class_accuracy")


def write_report(rows: Sequence[dict], path) -> None:
    """Machine-readable counterpart of ``format_table``."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in REPORT_COLUMNS])


def read_report(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("mean_error_m", "std_error_m", "class_accuracy"):
            row[key] = float(row[key]) if row.get(key) else None
        row["n_test"] = int(row["n_test"])
    return rows


def report_row(experiment: str, model_name: str, metrics: Metrics) -> dict:
    return {"experiment": experiment, "model": model_name, "n_test": len(metrics.per_scan_errors),
            "mean_error_m": metrics.mean_error_m, "std_error_m": metrics.std_error_m,
            "class_accuracy": metrics.class_accuracy}


def format_table(rows: Sequence[dict]) -> str:
    """Experiment/model/error table with mean ± std cells."""
    lines = [f"{'Experiment':<10}  {'Model':<16}  {'Test error (m)':>16}  {'Class acc.':>10}"]
    lines.append("-" * len(lines[0]))
    for row in rows:
        cell = f"{row['mean_error_m']:.2f} ± {row['std_error_m']:.2f}"
        acc = "" if row.get("class_accuracy") is None else f"{row['class_accuracy']:.3f}"
        lines.append(f"{row['experiment']:<10}  {row['model']:<16}  {cell:>16}  {acc:>10}")
    return "\n".join(lines)
