"""Positional DDx comparison, per-class metrics, macro means and summary scores.

A gold sequence and a predicted sequence are compared position by position.
Aligned positions land in the confusion matrix (row = gold, column =
predicted). Gold positions past the end of the prediction count as misses of
their gold class; predicted positions past the end of the gold sequence count
as false alarms of their predicted class.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, DomainError

PROTOCOL = (
    "positional: aligned positions -> confusion matrix; unmatched gold -> FN of gold class; "
    "unmatched prediction -> FP of predicted class"
)


class ConfusionMatrix:
    def __init__(self, n_classes: int, labels: Sequence[str] | None = None):
        if n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        self.n_classes = n_classes
        self.labels = list(labels) if labels is not None else [str(i) for i in range(n_classes)]
        if len(self.labels) != n_classes:
            raise ValueError(f"{len(self.labels)} labels for {n_classes} classes")
        self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        self.unmatched_gt = np.zeros(n_classes, dtype=np.int64)
        self.unmatched_pred = np.zeros(n_classes, dtype=np.int64)

    def _check(self, labels: Sequence[int]) -> None:
        for c in labels:
            if not 0 <= c < self.n_classes:
                raise IndexError(f"class label {c} outside [0, {self.n_classes})")

    def accumulate(self, gt: Sequence[int], pred: Sequence[int]) -> ConfusionMatrix:
        self._check(gt)
        self._check(pred)
        n = min(len(gt), len(pred))
        for g, p in zip(gt[:n], pred[:n]):
            self.counts[g, p] += 1
        for g in gt[n:]:
            self.unmatched_gt[g] += 1
        for p in pred[n:]:
            self.unmatched_pred[p] += 1
        return self

    def merge(self, other: ConfusionMatrix) -> ConfusionMatrix:
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge confusion matrices of different sizes")
        out = ConfusionMatrix(self.n_classes, self.labels)
        out.counts = self.counts + other.counts
        out.unmatched_gt = self.unmatched_gt + other.unmatched_gt
        out.unmatched_pred = self.unmatched_pred + other.unmatched_pred
        return out

    __add__ = merge

    @property
    def total(self) -> int:
        """Every counted position: aligned pairs plus both unmatched tallies."""
        return int(self.counts.sum() + self.unmatched_gt.sum() + self.unmatched_pred.sum())

    def to_dict(self) -> dict:
        return {"labels": self.labels, "counts": self.counts.tolist(),
                "unmatched_gt": self.unmatched_gt.tolist(), "unmatched_pred": self.unmatched_pred.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> ConfusionMatrix:
        cm = cls(len(data["labels"]), data["labels"])
        cm.counts = np.array(data["counts"], dtype=np.int64).reshape(cm.n_classes, cm.n_classes)
        cm.unmatched_gt = np.array(data["unmatched_gt"], dtype=np.int64)
        cm.unmatched_pred = np.array(data["unmatched_pred"], dtype=np.int64)
        return cm

    def __eq__(self, other) -> bool:
        return (isinstance(other, ConfusionMatrix) and self.labels == other.labels
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.unmatched_gt, other.unmatched_gt)
                and np.array_equal(self.unmatched_pred, other.unmatched_pred))


def accumulate_sequence(gt: Sequence[int], pred: Sequence[int], cm: ConfusionMatrix) -> ConfusionMatrix:
    return cm.accumulate(gt, pred)


@dataclass(frozen=True)
class ClassMetrics:
    accuracy: float   # percent
    precision: float  # percent
    recall: float     # percent
    f1: float         # fraction


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean; 0 when both inputs are 0. Works on fractions or percents alike."""
    s = precision + recall
    return 0.0 if s == 0 else 2.0 * precision * recall / s


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def per_class_metrics(cm: ConfusionMatrix) -> list[ClassMetrics]:
    total = cm.total
    out = []
    for c in range(cm.n_classes):
        tp = int(cm.counts[c, c])
        fn = int(cm.counts[c].sum() - tp + cm.unmatched_gt[c])
        fp = int(cm.counts[:, c].sum() - tp + cm.unmatched_pred[c])
        tn = total - tp - fn - fp
        p = _ratio(tp, tp + fp)
        r = _ratio(tp, tp + fn)
        out.append(ClassMetrics(100.0 * _ratio(tp + tn, total), 100.0 * p, 100.0 * r, f1_score(p, r)))
    return out


def macro_mean(metrics: Sequence[ClassMetrics]) -> ClassMetrics:
    if not metrics:
        raise ValueError("macro mean of an empty metric list")
    arr = np.array([[m.accuracy, m.precision, m.recall, m.f1] for m in metrics], dtype=np.float64)
    return ClassMetrics(*(float(v) for v in arr.mean(axis=0)))


def gtpa_at_1(predicted: Sequence, gold: Sequence) -> float:
    """Percent of cases whose top predicted pathology equals the gold one."""
    if len(predicted) != len(gold):
        raise ContractError(f"{len(predicted)} predictions for {len(gold)} gold labels")
    if not gold:
        raise ContractError("GTPA@1 of an empty set")
    return 100.0 * sum(p == g for p, g in zip(predicted, gold)) / len(gold)


def geometric_mean3(a: float, p: float, r: float) -> float:
    if min(a, p, r) <= 0:
        raise DomainError(f"geometric mean needs positive inputs, got {(a, p, r)}")
    return math.exp((math.log(a) + math.log(p) + math.log(r)) / 3.0)


def sequence_accuracy(predicted: Sequence[Sequence], gold: Sequence[Sequence]) -> float:
    """Percent of cases whose whole predicted sequence equals the gold sequence."""
    if len(predicted) != len(gold):
        raise ContractError(f"{len(predicted)} predictions for {len(gold)} gold sequences")
    return 100.0 * sum(list(p) == list(g) for p, g in zip(predicted, gold)) / max(len(gold), 1)


@dataclass
class EvalReport:
    class_names: list[str]
    per_class: list[ClassMetrics]
    macro: ClassMetrics
    gtpa_at_1: float
    ddp: float
    ddr: float
    ddf1: float
    gm: float
    confusion: ConfusionMatrix
    metadata: dict = field(default_factory=dict)

    def summary_line(self) -> str:
        return (f"GTPA@1 {self.gtpa_at_1:.2f}  DDP {self.ddp:.2f}  DDR {self.ddr:.2f}  "
                f"DDF1 {self.ddf1:.4f}  GM {self.gm:.2f}")

    def summary(self) -> dict:
        return {"GTPA@1": self.gtpa_at_1, "DDP": self.ddp, "DDR": self.ddr, "DDF1": self.ddf1, "GM": self.gm}

    def to_dict(self) -> dict:
        return {
            "summary": self.summary(),
            "class_names": self.class_names,
            "per_class": [asdict(m) for m in self.per_class],
            "macro": asdict(self.macro),
            "confusion": self.confusion.to_dict(),
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, data: dict) -> EvalReport:
        s = data["summary"]
        return cls(data["class_names"], [ClassMetrics(**m) for m in data["per_class"]],
                   ClassMetrics(**data["macro"]), s["GTPA@1"], s["DDP"], s["DDR"], s["DDF1"], s["GM"],
                   ConfusionMatrix.from_dict(data["confusion"]), data.get("metadata", {}))

    def __eq__(self, other) -> bool:
        return isinstance(other, EvalReport) and self.to_dict() == other.to_dict()


def build_report(cm: ConfusionMatrix, predicted_pathologies: Sequence, gold_pathologies: Sequence,
                 metadata: dict | None = None) -> EvalReport:
    per_class = per_class_metrics(cm)
    macro = macro_mean(per_class)
    gtpa = gtpa_at_1(predicted_pathologies, gold_pathologies)
    try:
        gm = geometric_mean3(gtpa, macro.precision, macro.recall)
    except DomainError:
        gm = 0.0
    meta = {"protocol": PROTOCOL, "ddf1": "macro mean of per-class F1", "n_cases": len(gold_pathologies),
            "positions": cm.total}
    meta.update(metadata or {})
    return EvalReport(list(cm.labels), per_class, macro, gtpa, macro.precision, macro.recall, macro.f1,
                      gm, cm, meta)


def emit_report(report: EvalReport, out_dir) -> list[Path]:
    """Write report.json, confusion_matrix.csv and per_class.csv into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / "report.json", out / "confusion_matrix.csv", out / "per_class.csv"]
        paths[0].write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
        with open(paths[1], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([""] + report.class_names)
            for name, row in zip(report.class_names, report.confusion.counts):
                w.writerow([name] + [int(v) for v in row])
        with open(paths[2], "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["Pathology", "Acc. (%)", "Prec. (%)", "Rec. (%)", "F1"])
            for name, m in zip(report.class_names, report.per_class):
                w.writerow([name, f"{m.accuracy:.2f}", f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.4f}"])
            m = report.macro
            w.writerow(["Mean", f"{m.accuracy:.2f}", f"{m.precision:.2f}", f"{m.recall:.2f}", f"{m.f1:.4f}"])
    except OSError as exc:
        raise OSError(f"writing report to {out}: {exc}") from exc
    return paths
