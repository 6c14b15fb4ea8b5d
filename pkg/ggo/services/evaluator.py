"""Classification metrics, table rendering and prediction files."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from logzero import logger
from scipy.stats import rankdata
from sklearn.metrics import confusion_matrix
from tabulate import tabulate

from ..schemas.labels import NUM_CLASSES, SEVERITY_LABELS, label_name
from ..schemas.report import ClassScores, EvalReport

LAYOUTS = ("table1", "table2", "table3")
ROW_SUM_TOLERANCE = 1e-6

_CAPTIONS = {
    "table1": "Fine-tuning extent: last layer only",
    "table2": "Fine-tuning extent: all layers",
    "table3": "Class-wise F1-macro on the unseen validation split",
}
_METRIC_HEADERS = ["Model", "Settings", "AUROC Val", "AUROC Unseen", "F1-macro Val", "F1-macro Unseen", "Pred. class distr."]
_CLASSWISE_HEADERS = ["Model", "Settings", "Average F1-macro"] + [name.capitalize() for name in SEVERITY_LABELS]


@dataclass(frozen=True)
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise ValueError(f"Confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("Confusion matrix entries must be non-negative")

    @classmethod
    def from_predictions(cls, labels: Sequence[int], preds: Sequence[int]) -> "ConfusionMatrix":
        return cls(confusion_matrix(labels, preds, labels=list(range(NUM_CLASSES))).astype(np.int64))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def true_positives(self) -> np.ndarray:
        return np.diag(self.counts)

    @property
    def false_positives(self) -> np.ndarray:
        return self.counts.sum(axis=0) - self.true_positives

    @property
    def false_negatives(self) -> np.ndarray:
        return self.counts.sum(axis=1) - self.true_positives


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def per_class_scores(cm: ConfusionMatrix) -> list[ClassScores]:
    scores = []
    for tp, fp, fn in zip(cm.true_positives, cm.false_positives, cm.false_negatives):
        precision = _ratio(float(tp), float(tp + fp))
        recall = _ratio(float(tp), float(tp + fn))
        scores.append(ClassScores(precision=precision, recall=recall, f1=_ratio(2 * precision * recall, precision + recall)))
    return scores


def f1_macro(cm: ConfusionMatrix) -> float:
    """Unweighted mean of per-class F1 as a percentage; 0/0 terms count as 0."""
    if cm.total == 0:
        raise ValueError("Cannot compute F1-macro of an empty confusion matrix")
    return 100.0 * float(np.mean([s.f1 for s in per_class_scores(cm)]))


def per_class_auroc(scores: np.ndarray, labels: Sequence[int]) -> list[Optional[float]]:
    """One-vs-rest rank statistic per column; None where a class lacks positives or negatives."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 2 or scores.shape[1] != NUM_CLASSES or scores.shape[0] != labels.shape[0]:
        raise ValueError(f"Expected scores of shape (N, {NUM_CLASSES}) matching {labels.shape[0]} labels")
    results: list[Optional[float]] = []
    for k in range(NUM_CLASSES):
        positive = labels == k
        n_pos = int(positive.sum())
        n_neg = labels.shape[0] - n_pos
        if n_pos == 0 or n_neg == 0:
            results.append(None)
            continue
        ranks = rankdata(scores[:, k], method="average")
        results.append((ranks[positive].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))
    return results


def auroc_macro(scores: np.ndarray, labels: Sequence[int]) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim == 2 and (np.abs(scores.sum(axis=1) - 1.0) > ROW_SUM_TOLERANCE).any():
        raise ValueError("Score rows must sum to 1")
    valid = [auc for auc in per_class_auroc(scores, labels) if auc is not None]
    if not valid:
        raise ValueError("No class has both positive and negative examples")
    return 100.0 * float(np.mean(valid))


def predict_distribution(preds: Sequence[int]) -> list[int]:
    preds = np.asarray(preds, dtype=np.int64)
    if preds.size and (preds.min() < 0 or preds.max() >= NUM_CLASSES):
        raise ValueError(f"Predictions must lie in 0..{NUM_CLASSES - 1}")
    return [int(c) for c in np.bincount(preds, minlength=NUM_CLASSES)]


def evaluate_predictions(
    run_id: str,
    split: str,
    labels: Sequence[int],
    probabilities: np.ndarray,
    masked: bool = True,
    cropped: bool = True,
) -> EvalReport:
    probabilities = np.asarray(probabilities, dtype=np.float64)
    preds = probabilities.argmax(axis=1)
    cm = ConfusionMatrix.from_predictions(labels, preds)
    try:
        auroc: Optional[float] = auroc_macro(probabilities, labels)
    except ValueError as exc:
        logger.warning("AUROC undefined for %s/%s: %s", run_id, split, exc)
        auroc = None
    return EvalReport(
        run_id=run_id,
        split=split,
        per_class=per_class_scores(cm),
        f1_macro=f1_macro(cm),
        auroc_macro=auroc,
        accuracy=float(cm.true_positives.sum()) / cm.total,
        pred_class_distribution=predict_distribution(preds),
        confusion=cm.counts.tolist(),
        n_evaluated=cm.total,
        masked=masked,
        cropped=cropped,
    )


@dataclass(frozen=True)
class TableRow:
    model: str
    settings: str
    val: Optional[EvalReport] = None
    unseen: Optional[EvalReport] = None
    test_distribution: Optional[Sequence[int]] = None

    @property
    def distribution(self) -> Optional[Sequence[int]]:
        if self.test_distribution is not None:
            return self.test_distribution
        return self.unseen.pred_class_distribution if self.unseen else None


def _pct(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.1f}"


def _distribution_cell(counts: Optional[Sequence[int]]) -> str:
    return "n/a" if counts is None else ", ".join(str(int(c)) for c in counts)


def _check_layout(layout: str) -> None:
    if layout not in LAYOUTS:
        raise ValueError(f"Unknown layout '{layout}'; expected one of {', '.join(LAYOUTS)}")


def _raw_cells(row: TableRow, layout: str) -> list:
    if layout == "table3":
        source = row.unseen or row.val
        classwise = [s.f1 * 100.0 for s in source.per_class] if source else [None] * NUM_CLASSES
        return [row.model, row.settings, source.f1_macro if source else None, *classwise]
    return [
        row.model,
        row.settings,
        row.val.auroc_macro if row.val else None,
        row.unseen.auroc_macro if row.unseen else None,
        row.val.f1_macro if row.val else None,
        row.unseen.f1_macro if row.unseen else None,
        _distribution_cell(row.distribution),
    ]


def table_caption(layout: str) -> str:
    _check_layout(layout)
    return _CAPTIONS[layout]


def table_headers(layout: str) -> list[str]:
    _check_layout(layout)
    return list(_CLASSWISE_HEADERS if layout == "table3" else _METRIC_HEADERS)


def table_rows(rows: Sequence[TableRow], layout: str) -> list[list[str]]:
    """Cells as rendered: one decimal, 'n/a' for undefined values."""
    _check_layout(layout)
    return [
        [cell if isinstance(cell, str) else _pct(cell) for cell in _raw_cells(row, layout)]
        for row in rows
    ]


def emit_report(rows: Sequence[TableRow], layout: str) -> str:
    _check_layout(layout)
    if not rows:
        raise ValueError("emit_report needs at least one row")
    body = tabulate(table_rows(rows, layout), headers=table_headers(layout), tablefmt="orgtbl", disable_numparse=True)
    return f"{_CAPTIONS[layout]}\n{body}\n"


def report_frame(rows: Sequence[TableRow], layout: str) -> pd.DataFrame:
    _check_layout(layout)
    records = []
    for row in rows:
        cells = _raw_cells(row, layout)
        records.append([c if isinstance(c, str) or c is None else round(float(c), 1) for c in cells])
    return pd.DataFrame(records, columns=table_headers(layout))


def write_report(rows: Sequence[TableRow], layout: str, out_dir: Path, stem: Optional[str] = None) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or layout
    txt_path = out_dir / f"{stem}.txt"
    csv_path = out_dir / f"{stem}.csv"
    txt_path.write_text(emit_report(rows, layout), encoding="utf-8")
    report_frame(rows, layout).to_csv(csv_path, index=False, lineterminator="\n", na_rep="n/a")
    return txt_path, csv_path


def emit_predictions(preds: Sequence[tuple[str, int]], path: Path) -> Path:
    counts = Counter(sid for sid, _ in preds)
    duplicates = sorted(sid for sid, n in counts.items() if n > 1)
    if duplicates:
        raise ValueError(f"Duplicate predictions for scan_id: {', '.join(duplicates)}")
    ordered = sorted(preds, key=lambda item: item[0])
    frame = pd.DataFrame([(sid, label_name(int(cls))) for sid, cls in ordered], columns=["scan_id", "severity"])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    logger.info("Wrote %d predictions to %s", len(frame), path)
    return path
