"""Metrics and evaluation reports.

AUC uses the Mann-Whitney statistic with ties counted half. The numerator is
accumulated as an exact integer (twice the U statistic) so the result is
bit-identical to a brute-force pair count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint
from .models.cnn import ModelSpec, forward
from .models.hog_svm import HogSvmModel, hog_features_batch, predict_hog_svm
from .preprocessing import PixelStats, apply_pixel_stats, normalize_image


def accuracy_from_counts(tp: int, tn: int, fp: int, fn: int) -> float:
    """(TP + TN) / total from confusion counts."""
    for name, count in (("tp", tp), ("tn", tn), ("fp", fp), ("fn", fn)):
        if count < 0:
            raise ValueError(f"{name} must be >= 0, got {count}")
    total = tp + tn + fp + fn
    if total == 0:
        raise ValueError("cannot compute accuracy from all-zero counts")
    return (tp + tn) / total


def f1_from_counts(tp: int, fp: int, fn: int) -> float:
    """Harmonic mean of precision and recall; degenerate denominators give 0."""
    for name, count in (("tp", tp), ("fp", fp), ("fn", fn)):
        if count < 0:
            raise ValueError(f"{name} must be >= 0, got {count}")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def accuracy(labels: np.ndarray, predictions: np.ndarray) -> float:
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {predictions.shape}")
    if labels.size == 0:
        raise ValueError("cannot compute accuracy of an empty set")
    return int((labels == predictions).sum()) / labels.size


def f1_score(labels: np.ndarray, predictions: np.ndarray) -> float:
    """Binary F1 for the positive class 1; routes through f1_from_counts so
    the two computations agree bit for bit."""
    labels = np.asarray(labels)
    predictions = np.asarray(predictions)
    if labels.shape != predictions.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {predictions.shape}")
    tp = int(((labels == 1) & (predictions == 1)).sum())
    fp = int(((labels == 0) & (predictions == 1)).sum())
    fn = int(((labels == 1) & (predictions == 0)).sum())
    return f1_from_counts(tp, fp, fn)


def auc_score(labels: np.ndarray, scores: np.ndarray) -> float:
    """Probability a random positive outscores a random negative, ties half.

    Tied pairs contribute exactly 1 to the doubled numerator, so no floating
    point enters until the final division.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores)
    if labels.shape != scores.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {scores.shape}")
    positives = int((labels == 1).sum())
    negatives = int((labels == 0).sum())
    if positives + negatives != labels.size:
        raise ValueError("labels must be 0 or 1")
    if positives == 0 or negatives == 0:
        raise ValueError("AUC needs at least one sample of each class")

    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    sorted_labels = labels[order]
    twice_u = 0
    negatives_below = 0
    start = 0
    n = labels.size
    while start < n:
        stop = start
        while stop < n and sorted_scores[stop] == sorted_scores[start]:
            stop += 1
        group = sorted_labels[start:stop]
        group_pos = int((group == 1).sum())
        group_neg = stop - start - group_pos
        # each positive here beats every strictly lower negative, halves ties
        twice_u += group_pos * (2 * negatives_below + group_neg)
        negatives_below += group_neg
        start = stop
    return twice_u / (2 * positives * negatives)


def confusion_matrix(labels: np.ndarray, predictions: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts with true class on rows and predicted class on columns."""
    labels = np.asarray(labels, dtype=np.int64)
    predictions = np.asarray(predictions, dtype=np.int64)
    if labels.shape != predictions.shape:
        raise ValueError(f"shape mismatch: {labels.shape} vs {predictions.shape}")
    if labels.size == 0:
        raise ValueError("cannot build a confusion matrix from empty inputs")
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    for name, values in (("labels", labels), ("predictions", predictions)):
        if values.size and (values.min() < 0 or values.max() >= num_classes):
            raise ValueError(f"{name} out of range for {num_classes} classes")
    counts = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(counts, (labels, predictions), 1)
    return counts


def row_percentages(counts: np.ndarray) -> np.ndarray:
    """Row-normalized percentages rounded to two decimals; empty rows stay zero."""
    counts = np.asarray(counts, dtype=np.float64)
    sums = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        percent = np.where(sums > 0, counts / sums * 100.0, 0.0)
    return np.round(percent, 2)


@dataclass
class EvalReport:
    model_id: str
    split: str
    num_samples: int
    label_names: tuple[str, ...]
    metrics: dict[str, float]
    confusion: np.ndarray
    confusion_percent: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.confusion = np.asarray(self.confusion, dtype=np.int64)
        k = len(self.label_names)
        if self.confusion.shape != (k, k):
            raise ValueError(
                f"confusion shape {self.confusion.shape} does not match {k} labels"
            )
        self.confusion_percent = row_percentages(self.confusion)

    def to_json(self) -> dict:
        return {
            "model_id": self.model_id,
            "split": self.split,
            "num_samples": self.num_samples,
            "label_names": list(self.label_names),
            "metrics": dict(self.metrics),
            "confusion": self.confusion.tolist(),
            "confusion_percent": self.confusion_percent.tolist(),
        }

    @classmethod
    def from_json(cls, payload: dict) -> "EvalReport":
        return cls(
            model_id=payload["model_id"],
            split=payload["split"],
            num_samples=payload["num_samples"],
            label_names=tuple(payload["label_names"]),
            metrics={key: float(value) for key, value in payload["metrics"].items()},
            confusion=np.asarray(payload["confusion"], dtype=np.int64),
        )

    def format_table(self) -> str:
        lines = [f"model: {self.model_id}  split: {self.split}  n: {self.num_samples}"]
        parts = []
        for key in ("accuracy", "f1", "auc"):
            if key in self.metrics:
                parts.append(f"{key}: {self.metrics[key]:.4f}")
        lines.append("  ".join(parts))
        width = max(len(name) for name in self.label_names) + 2
        header = " " * width + "".join(f"{'-> ' + name:>22}" for name in self.label_names)
        lines.append(header)
        for row, name in enumerate(self.label_names):
            cells = "".join(
                f"{self.confusion[row, col]:>12} ({self.confusion_percent[row, col]:6.2f}%)"
                for col in range(len(self.label_names))
            )
            lines.append(f"{name:<{width}}" + cells)
        return "\n".join(lines)


def write_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_json(), indent=2) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    return EvalReport.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _normalized_batch(images: np.ndarray, stats: PixelStats) -> np.ndarray:
    grids = np.stack([normalize_image(image) for image in images])
    return apply_pixel_stats(grids, stats).astype(np.float32)


def predict_proba(
    spec: ModelSpec, checkpoint: Checkpoint, images: np.ndarray, batch_size: int = 256
) -> np.ndarray:
    """Class probabilities for raw uint8 grayscale images, applying the pixel
    statistics stored in the checkpoint."""
    stats = PixelStats.from_tensors(checkpoint.tensors)
    chunks = []
    for start in range(0, len(images), batch_size):
        batch = _normalized_batch(images[start : start + batch_size], stats)
        chunks.append(forward(spec, checkpoint, batch))
    return np.concatenate(chunks, axis=0)


def evaluate_model(
    spec: ModelSpec,
    checkpoint: Checkpoint,
    images: np.ndarray,
    labels: np.ndarray,
    label_names: tuple[str, ...],
    split: str = "test",
    model_id: str = "model",
) -> EvalReport:
    """Full pipeline evaluation; binary heads also get F1 and AUC."""
    if len(images) != len(labels):
        raise ValueError("images and labels must have equal length")
    labels = np.asarray(labels, dtype=np.int64)
    probabilities = predict_proba(spec, checkpoint, images)
    predictions = probabilities.argmax(axis=1)
    metrics = {"accuracy": accuracy(labels, predictions)}
    if spec.num_classes == 2:
        metrics["f1"] = f1_score(labels, predictions)
        if len(np.unique(labels)) == 2:
            metrics["auc"] = auc_score(labels, probabilities[:, 1])
    return EvalReport(
        model_id=model_id,
        split=split,
        num_samples=len(labels),
        label_names=label_names,
        metrics=metrics,
        confusion=confusion_matrix(labels, predictions, len(label_names)),
    )


def evaluate_hog_svm(
    model: HogSvmModel,
    images: np.ndarray,
    labels: np.ndarray,
    label_names: tuple[str, ...],
    split: str = "test",
    model_id: str = "hog_svm",
) -> EvalReport:
    """Linear SVM evaluation; AUC comes from the signed decision scores."""
    if len(images) != len(labels):
        raise ValueError("images and labels must have equal length")
    labels = np.asarray(labels, dtype=np.int64)
    features = hog_features_batch(images, model.params)
    predictions, scores = predict_hog_svm(model, features)
    metrics = {"accuracy": accuracy(labels, predictions), "f1": f1_score(labels, predictions)}
    if len(np.unique(labels)) == 2:
        metrics["auc"] = auc_score(labels, scores)
    return EvalReport(
        model_id=model_id,
        split=split,
        num_samples=len(labels),
        label_names=label_names,
        metrics=metrics,
        confusion=confusion_matrix(labels, predictions, len(label_names)),
    )
