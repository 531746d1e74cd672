"""ROC/AUC, confusion counts, precision/recall/F1 and accuracy reports."""

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import RocUndefinedError

DEFAULT_THRESHOLD = 0.5


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # +inf first, then distinct scores descending

    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"fpr": self.fpr, "tpr": self.tpr, "threshold": self.thresholds})


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )


@dataclass
class RateSet:
    precision: float
    recall: float
    f1: float
    zero_division: List[str] = field(default_factory=list)


@dataclass
class LabelMetrics:
    name: str
    auc: Optional[float]  # None when the label has a single class in this split
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    zero_division: List[str] = field(default_factory=list)


@dataclass
class MetricsReport:
    labels: List[LabelMetrics]
    threshold: float
    accuracy: float
    macro: RateSet
    micro: RateSet
    mean_auc: float
    auc_excluded: List[str] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for m in self.labels:
            rows.append(
                {
                    "label": m.name,
                    "auc": np.nan if m.auc is None else m.auc,
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "tp": m.counts.tp,
                    "fp": m.counts.fp,
                    "tn": m.counts.tn,
                    "fn": m.counts.fn,
                    "zero_division": "|".join(m.zero_division),
                }
            )
        return pd.DataFrame(rows)

    def summary_frame(self) -> pd.DataFrame:
        values = [
            ("threshold", self.threshold),
            ("accuracy", self.accuracy),
            ("mean_auc", self.mean_auc),
            ("macro_precision", self.macro.precision),
            ("macro_recall", self.macro.recall),
            ("macro_f1", self.macro.f1),
            ("micro_precision", self.micro.precision),
            ("micro_recall", self.micro.recall),
            ("micro_f1", self.micro.f1),
            ("auc_excluded", "|".join(self.auc_excluded)),
        ]
        return pd.DataFrame(values, columns=["metric", "value"])

    def to_text(self) -> str:
        lines = [
            f"Decision threshold: {self.threshold}",
            f"Accuracy:           {self.accuracy:.4f}",
            f"Mean AUC:           {self.mean_auc:.4f}",
            f"Macro P/R/F1:       {self.macro.precision:.4f} / {self.macro.recall:.4f} / {self.macro.f1:.4f}",
            f"Micro P/R/F1:       {self.micro.precision:.4f} / {self.micro.recall:.4f} / {self.micro.f1:.4f}",
        ]
        if self.auc_excluded:
            lines.append(f"AUC undefined (single class): {', '.join(self.auc_excluded)}")
        lines.append("")
        lines.append(f"{'label':<20} {'auc':>7} {'prec':>7} {'recall':>7} {'f1':>7}  tp/fp/tn/fn")
        for m in self.labels:
            auc_text = "n/a" if m.auc is None else f"{m.auc:.4f}"
            flag = f"  (0/0: {', '.join(m.zero_division)})" if m.zero_division else ""
            c = m.counts
            lines.append(
                f"{m.name:<20} {auc_text:>7} {m.precision:>7.4f} {m.recall:>7.4f} "
                f"{m.f1:>7.4f}  {c.tp}/{c.fp}/{c.tn}/{c.fn}{flag}"
            )
        return "\n".join(lines) + "\n"


def _binary_labels(labels) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return y


def roc_curve(scores, labels) -> RocCurve:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = _binary_labels(labels)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    positives = y.sum()
    negatives = y.size - positives
    if positives == 0 or negatives == 0:
        raise RocUndefinedError(
            f"ROC undefined without both classes ({int(positives)} positive, {int(negatives)} negative)"
        )

    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    # last index of each run of equal scores
    ends = np.append(np.nonzero(np.diff(s))[0], s.size - 1)
    tps = np.cumsum(y)[ends]
    fps = (ends + 1) - tps
    return RocCurve(
        fpr=np.concatenate([[0.0], fps / negatives]),
        tpr=np.concatenate([[0.0], tps / positives]),
        thresholds=np.concatenate([[np.inf], s[ends]]),
    )


def auc(curve: RocCurve) -> float:
    fpr, tpr = np.asarray(curve.fpr), np.asarray(curve.tpr)
    if fpr.shape != tpr.shape or fpr.size < 2:
        raise ValueError("ROC curve needs matching coordinate arrays with at least two points")
    if (fpr[0], tpr[0]) != (0.0, 0.0) or (fpr[-1], tpr[-1]) != (1.0, 1.0):
        raise ValueError("ROC curve must start at (0, 0) and end at (1, 1)")
    if np.any(np.diff(fpr) < 0) or np.any(np.diff(tpr) < 0):
        raise ValueError("ROC curve coordinates must be non-decreasing")
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def confusion_counts(predictions, labels) -> ConfusionCounts:
    p = np.asarray(predictions, dtype=bool).reshape(-1)
    y = _binary_labels(labels).astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(p & y)),
        fp=int(np.sum(p & ~y)),
        tn=int(np.sum(~p & ~y)),
        fn=int(np.sum(~p & y)),
    )


def rates(counts: ConfusionCounts) -> RateSet:
    """Precision, recall and F1; a zero denominator yields 0 and is flagged"""
    flags = []
    if counts.tp + counts.fp:
        precision = counts.tp / (counts.tp + counts.fp)
    else:
        precision = 0.0
        flags.append("precision")
    if counts.tp + counts.fn:
        recall = counts.tp / (counts.tp + counts.fn)
    else:
        recall = 0.0
        flags.append("recall")
    if precision + recall:
        f1 = 2.0 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
        flags.append("f1")
    return RateSet(precision, recall, f1, flags)


def classification_report(
    probs,
    labels,
    threshold: float = DEFAULT_THRESHOLD,
    names: Optional[Sequence[str]] = None,
) -> MetricsReport:
    """
    Per-label and aggregate metrics for a B x C probability matrix.

    Labels whose split holds a single class get no AUC and are listed in
    `auc_excluded`; the mean AUC covers the rest. If no label has a defined
    ROC the report cannot be built and RocUndefinedError is raised.
    """
    p = np.asarray(probs, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if y.ndim == 1:
        y = y[:, None]
    if p.shape != y.shape:
        raise ValueError(f"probs {p.shape} and labels {y.shape} differ in shape")
    if p.shape[0] == 0:
        raise ValueError("classification_report needs at least one sample")
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    names = list(names) if names is not None else [f"label_{i}" for i in range(p.shape[1])]
    if len(names) != p.shape[1]:
        raise ValueError(f"{len(names)} label names for {p.shape[1]} columns")

    predictions = p >= threshold
    per_label, total, excluded, aucs = [], ConfusionCounts(), [], []
    undefined_reason = None
    for j, name in enumerate(names):
        counts = confusion_counts(predictions[:, j], y[:, j])
        total = total + counts
        r = rates(counts)
        try:
            label_auc = auc(roc_curve(p[:, j], y[:, j]))
            aucs.append(label_auc)
        except RocUndefinedError as e:
            label_auc = None
            excluded.append(name)
            undefined_reason = str(e)
        per_label.append(
            LabelMetrics(name, label_auc, r.precision, r.recall, r.f1, counts, r.zero_division)
        )

    if not aucs:
        raise RocUndefinedError(
            f"ROC undefined for every label in this split: {undefined_reason}"
        )

    macro = RateSet(
        float(np.mean([m.precision for m in per_label])),
        float(np.mean([m.recall for m in per_label])),
        float(np.mean([m.f1 for m in per_label])),
    )
    return MetricsReport(
        labels=per_label,
        threshold=threshold,
        accuracy=float(np.mean(predictions == (y == 1))),
        macro=macro,
        micro=rates(total),
        mean_auc=float(np.mean(aucs)),
        auc_excluded=excluded,
    )
