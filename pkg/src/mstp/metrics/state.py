"""Frame-level state metrics: accuracy plus per-class PR/RE/F1/Jaccard.

All values are percentages in [0, 100].  Per-class counts come from frame
index sets: for class c, precision is |GT_c ∩ Pred_c| / |Pred_c|, recall
divides by |GT_c|, Jaccard by |GT_c ∪ Pred_c|, and F1 is the harmonic mean
of precision and recall.  A class absent from one side contributes 0 for
the ratios over its empty set.  Macro averages run over the classes
present in either side.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Hashable, Mapping, Sequence

from ..errors import EmptyInput, LengthMismatch, SchemaMismatch
from ..model import StateVector

JOINT_SEPARATOR = "/"


@dataclass(frozen=True)
class ClassMetrics:
    """Percent precision, recall, F1, and Jaccard for one class."""

    precision: float
    recall: float
    f1: float
    jaccard: float


@dataclass(frozen=True)
class StateMetricsReport:
    """Accuracy plus per-class and macro-averaged set metrics."""

    accuracy: float
    per_class: Mapping[str, ClassMetrics]
    macro: ClassMetrics
    classes: tuple[str, ...]
    frame_count: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "accuracy": self.accuracy,
            "frame_count": self.frame_count,
            "classes": list(self.classes),
            "per_class": {
                name: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "jaccard": m.jaccard,
                }
                for name, m in self.per_class.items()
            },
            "macro": {
                "precision": self.macro.precision,
                "recall": self.macro.recall,
                "f1": self.macro.f1,
                "jaccard": self.macro.jaccard,
            },
        }

    @classmethod
    def from_dict(cls, payload: Mapping[str, Any]) -> "StateMetricsReport":
        per_class = {
            name: ClassMetrics(**values)
            for name, values in payload["per_class"].items()
        }
        return cls(
            accuracy=payload["accuracy"],
            per_class=per_class,
            macro=ClassMetrics(**payload["macro"]),
            classes=tuple(payload["classes"]),
            frame_count=payload["frame_count"],
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "StateMetricsReport":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _class_metrics(tp: int, n_pred: int, n_truth: int, n_union: int) -> ClassMetrics:
    precision = 100.0 * tp / n_pred if n_pred else 0.0
    recall = 100.0 * tp / n_truth if n_truth else 0.0
    jaccard = 100.0 * tp / n_union if n_union else 0.0
    f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ClassMetrics(precision=precision, recall=recall, f1=f1, jaccard=jaccard)


def _metrics_over(pred: Sequence[Hashable], truth: Sequence[Hashable]):
    if len(pred) != len(truth):
        raise LengthMismatch(
            f"prediction has {len(pred)} frames, truth has {len(truth)}"
        )
    if not pred:
        raise EmptyInput("state metrics need at least one frame")
    total = len(pred)
    correct = sum(1 for p, t in zip(pred, truth) if p == t)
    accuracy = 100.0 * correct / total
    classes = sorted(set(pred) | set(truth), key=repr)
    per_class: dict[Hashable, ClassMetrics] = {}
    for cls in classes:
        tp = sum(1 for p, t in zip(pred, truth) if p == cls and t == cls)
        n_pred = sum(1 for p in pred if p == cls)
        n_truth = sum(1 for t in truth if t == cls)
        n_union = n_pred + n_truth - tp
        per_class[cls] = _class_metrics(tp, n_pred, n_truth, n_union)
    macro = ClassMetrics(
        precision=sum(m.precision for m in per_class.values()) / len(classes),
        recall=sum(m.recall for m in per_class.values()) / len(classes),
        f1=sum(m.f1 for m in per_class.values()) / len(classes),
        jaccard=sum(m.jaccard for m in per_class.values()) / len(classes),
    )
    return accuracy, per_class, macro, classes, total


def state_metrics(
    pred: Sequence[str], truth: Sequence[str]
) -> StateMetricsReport:
    """Score one level's label sequence against ground truth.

    Raises:
        LengthMismatch: the sequences differ in length.
        EmptyInput: both sequences are empty.
    """
    accuracy, per_class, macro, classes, total = _metrics_over(pred, truth)
    return StateMetricsReport(
        accuracy=accuracy,
        per_class={str(c): m for c, m in per_class.items()},
        macro=macro,
        classes=tuple(str(c) for c in classes),
        frame_count=total,
    )


def joint_state_metrics(
    pred: Sequence[StateVector], truth: Sequence[StateVector]
) -> StateMetricsReport:
    """Score full state tuples, each treated as a single class.

    Joint class names join the level labels with "/" for reporting, so a
    tuple counts as correct only when every level matches.
    """
    if pred and truth and pred[0].schema_id != truth[0].schema_id:
        raise SchemaMismatch("prediction and truth reference different schemas")
    pred_tuples = [p.labels for p in pred]
    truth_tuples = [t.labels for t in truth]
    accuracy, per_class, macro, classes, total = _metrics_over(
        pred_tuples, truth_tuples
    )
    return StateMetricsReport(
        accuracy=accuracy,
        per_class={JOINT_SEPARATOR.join(c): m for c, m in per_class.items()},
        macro=macro,
        classes=tuple(JOINT_SEPARATOR.join(c) for c in classes),
        frame_count=total,
    )
