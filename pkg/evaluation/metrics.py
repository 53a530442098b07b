from __future__ import annotations

import string
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

from models.errors import CorpusError
from models.invoice import FIELD_LABELS, LABELS, NUM_LABELS, FieldValues

_PUNCT = string.punctuation + " "


def normalize_field(value: str) -> str:
    """Exact-match key: case-fold, collapse whitespace, strip outer punctuation."""
    return " ".join(value.casefold().split()).strip(_PUNCT)


@dataclass
class Scores:
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0
    correct: int = 0
    predicted: int = 0
    gold: int = 0

    @staticmethod
    def from_counts(correct: int, predicted: int, gold: int) -> "Scores":
        if predicted == 0 and gold == 0:
            # degenerate counts score zero
            return Scores(0.0, 0.0, 0.0, 0, 0, 0)
        p = correct / predicted if predicted else 0.0
        r = correct / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return Scores(p, r, f1, correct, predicted, gold)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FieldReport:
    per_field: Dict[str, Scores] = field(default_factory=dict)
    micro: Scores = field(default_factory=Scores)
    invoices: int = 0

    def to_dict(self) -> dict:
        return {
            "per_field": {k: v.to_dict() for k, v in self.per_field.items()},
            "micro": self.micro.to_dict(),
            "invoices": self.invoices,
        }

    @staticmethod
    def from_dict(data: dict) -> "FieldReport":
        return FieldReport(
            per_field={k: Scores(**v) for k, v in data["per_field"].items()},
            micro=Scores(**data["micro"]),
            invoices=int(data["invoices"]),
        )


@dataclass
class BoxReport:
    accuracy: float = 0.0
    per_class: Dict[str, Scores] = field(default_factory=dict)
    macro_f1: float = 0.0
    # rows are gold ids, columns predicted ids
    confusion: List[List[int]] = field(default_factory=list)
    boxes: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {k: v.to_dict() for k, v in self.per_class.items()},
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
            "boxes": self.boxes,
        }

    @staticmethod
    def from_dict(data: dict) -> "BoxReport":
        return BoxReport(
            accuracy=float(data["accuracy"]),
            per_class={k: Scores(**v) for k, v in data["per_class"].items()},
            macro_f1=float(data["macro_f1"]),
            confusion=[list(map(int, row)) for row in data["confusion"]],
            boxes=int(data["boxes"]),
        )


@dataclass
class EvalReport:
    method: str
    fields: FieldReport = field(default_factory=FieldReport)
    boxes: BoxReport = field(default_factory=BoxReport)

    def to_dict(self) -> dict:
        return {"method": self.method, "fields": self.fields.to_dict(), "boxes": self.boxes.to_dict()}

    @staticmethod
    def from_dict(data: dict) -> "EvalReport":
        return EvalReport(
            method=data["method"],
            fields=FieldReport.from_dict(data["fields"]),
            boxes=BoxReport.from_dict(data["boxes"]),
        )


def evaluate_fields(preds: Mapping[str, FieldValues], golds: Mapping[str, FieldValues]) -> FieldReport:
    if set(preds) != set(golds):
        only_pred = sorted(set(preds) - set(golds))
        only_gold = sorted(set(golds) - set(preds))
        raise CorpusError(f"invoice ids differ: predicted-only {only_pred}, gold-only {only_gold}")
    counts = {label: [0, 0, 0] for label in FIELD_LABELS}
    # sorted ids keep the report independent of mapping order
    for inv_id in sorted(golds):
        pred, gold = preds[inv_id], golds[inv_id]
        for label in FIELD_LABELS:
            p = normalize_field(pred.value(label))
            g = normalize_field(gold.value(label))
            c = counts[label]
            c[0] += int(bool(p) and bool(g) and p == g)
            c[1] += int(bool(p))
            c[2] += int(bool(g))
    per_field = {label.value: Scores.from_counts(*counts[label]) for label in FIELD_LABELS}
    totals = [sum(counts[label][k] for label in FIELD_LABELS) for k in range(3)]
    return FieldReport(per_field=per_field, micro=Scores.from_counts(*totals), invoices=len(golds))


def evaluate_boxes(pred: Sequence[int], gold: Sequence[int]) -> BoxReport:
    if len(pred) != len(gold):
        raise ValueError(f"{len(pred)} predicted labels for {len(gold)} gold labels")
    confusion = np.zeros((NUM_LABELS, NUM_LABELS), dtype=np.int64)
    if len(gold):
        np.add.at(confusion, (np.asarray(gold, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    per_class: Dict[str, Scores] = {}
    for k, label in enumerate(LABELS):
        per_class[label.value] = Scores.from_counts(
            int(confusion[k, k]), int(confusion[:, k].sum()), int(confusion[k, :].sum())
        )
    field_f1 = [per_class[label.value].f1 for label in FIELD_LABELS]
    n = len(gold)
    return BoxReport(
        accuracy=float(np.trace(confusion)) / n if n else 0.0,
        per_class=per_class,
        macro_f1=sum(field_f1) / len(field_f1),
        confusion=confusion.tolist(),
        boxes=n,
    )
