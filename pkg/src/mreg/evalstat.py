"""Confusion matrices, macro one-vs-rest metrics, chi-square comparison and frame-score export."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np

N_CLASSES = 3

# reference values reported for the clinical dataset; not reproducible here
REPORTED_CLINICAL_METRICS = {"accuracy": 89.36, "recall": 85.93, "precision": 86.83,
                             "specificity": 86.36, "f1": 94.28}


def confusion(preds, labels, n_classes: int = N_CLASSES) -> np.ndarray:
    """Rows are true grades, columns predicted grades."""
    preds = np.asarray(preds, dtype=np.int64).ravel()
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.size} predictions vs {labels.size} labels")
    for name, arr in (("predictions", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise ValueError(f"{name} must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


@dataclass
class MetricsReport:
    confusion: list
    n: int
    accuracy: float
    recall: float
    precision: float
    specificity: float
    f1: float
    per_class: dict = field(default_factory=dict)
    degenerate: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _rate(num, den, flag, degenerate):
    if den == 0:
        degenerate.append(flag)
        return 0.0
    return 100.0 * num / den


def metrics(cm) -> MetricsReport:
    """Accuracy plus macro-averaged one-vs-rest recall, precision, specificity and F1 (percent)."""
    cm = np.asarray(cm, dtype=np.int64)
    if (cm < 0).any():
        raise ValueError("confusion matrix must be non-negative")
    n = int(cm.sum())
    k = cm.shape[0]
    degenerate: list[str] = []
    per = {"recall": [], "precision": [], "specificity": [], "f1": []}
    raw = []
    for c in range(k):
        tp = int(cm[c, c])
        fn = int(cm[c].sum()) - tp
        fp = int(cm[:, c].sum()) - tp
        tn = n - tp - fn - fp
        r = _rate(tp, tp + fn, f"recall[{c}]", degenerate)
        p = _rate(tp, tp + fp, f"precision[{c}]", degenerate)
        s = _rate(tn, tn + fp, f"specificity[{c}]", degenerate)
        if p + r == 0:
            degenerate.append(f"f1[{c}]")
            f = 0.0
        else:
            f = 2 * p * r / (p + r)
        for key, v in zip(("recall", "precision", "specificity", "f1"), (r, p, s, f)):
            per[key].append(round(v, 2))
        raw.append((r, p, s, f))
    macro = np.mean(raw, axis=0) if raw else np.zeros(4)
    acc = _rate(int(np.trace(cm)), n, "accuracy", degenerate)
    return MetricsReport(
        confusion=cm.tolist(), n=n, accuracy=round(acc, 2),
        recall=round(float(macro[0]), 2), precision=round(float(macro[1]), 2),
        specificity=round(float(macro[2]), 2), f1=round(float(macro[3]), 2),
        per_class=per, degenerate=degenerate,
    )


def evaluate_predictions(preds, labels) -> MetricsReport:
    return metrics(confusion(preds, labels))


def chi2_sf_1dof(x: float) -> float:
    """Upper tail of the 1-dof chi-square distribution, ``erfc(sqrt(x/2))``."""
    if x <= 0:
        return 1.0
    return math.erfc(math.sqrt(x / 2.0))


@dataclass
class ChiSquareResult:
    statistic: float
    p_value: float
    degenerate: bool = False
    table: list = field(default_factory=list)


def chi_square_compare(correct_a, correct_b) -> ChiSquareResult:
    """Pearson chi-square on the 2x2 (method x correct/wrong) table, no continuity correction."""
    a = np.asarray(correct_a, dtype=bool).ravel()
    b = np.asarray(correct_b, dtype=bool).ravel()
    if a.size != b.size or a.size == 0:
        raise ValueError("correctness vectors must have equal, non-zero length")
    table = np.array([[a.sum(), (~a).sum()], [b.sum(), (~b).sum()]], dtype=np.float64)
    rows, cols, n = table.sum(axis=1), table.sum(axis=0), table.sum()
    if (rows == 0).any() or (cols == 0).any():
        return ChiSquareResult(0.0, 1.0, True, table.astype(int).tolist())
    expected = np.outer(rows, cols) / n
    stat = float(((table - expected) ** 2 / expected).sum())
    return ChiSquareResult(stat, chi2_sf_1dof(stat), False, table.astype(int).tolist())


FRAME_SCORE_COLUMNS = ("sample_id", "instance", "selected", "frame", "mixed_score",
                       "expert0_score", "expert1_score", "expert2_score", "label", "prediction")


def frame_score_rows(sample_id, output, label):
    """Yield one row per (instance, frame) of a :class:`~mreg.model.ModelOutput`."""
    mixed = np.asarray(output.frame_scores_mixed.detach().double())
    experts = np.asarray(output.frame_scores_expert.detach().double())
    n_inst, n_t = mixed.shape
    for i in range(n_inst):
        for t in range(n_t):
            yield (sample_id, i, int(i == output.alpha), t, repr(float(mixed[i, t])),
                   *(repr(float(experts[e, i, t])) for e in range(experts.shape[0])),
                   int(label), int(output.grade_pred))


def export_frame_scores(samples, path) -> int:
    """Write ``(sample_id, ModelOutput, label)`` triples as CSV; returns the row count."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FRAME_SCORE_COLUMNS)
        for sample_id, output, label in samples:
            for row in frame_score_rows(sample_id, output, label):
                w.writerow(row)
                n += 1
    return n


def read_frame_scores(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))
