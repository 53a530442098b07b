"""Pattern and keyword-proximity extraction, no learning involved."""

from __future__ import annotations

import math
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from evaluation.postprocess import MONTH_DATE, NUMERIC_DATE, aggregate_fields
from models.corpus import reading_order
from models.invoice import FieldLabel, FieldPrediction, Invoice

_AMOUNT_RE = re.compile(r"^[^\d\s]{0,3}\d[\d,]*(?:\.\d{1,2})?$")


@dataclass
class RuleConfig:
    # tried in order; the first box in reading order matching any of them is the date
    date_patterns: List[str] = field(default_factory=lambda: [NUMERIC_DATE, MONTH_DATE])
    total_keywords: List[str] = field(default_factory=lambda: ["TOTAL", "AMOUNT"])
    # fraction of the page diagonal
    proximity_radius: float = 0.15
    max_address_boxes: int = 4

    def validate(self) -> None:
        if not self.date_patterns:
            raise ValueError("at least one date pattern is required")
        if not self.total_keywords:
            raise ValueError("at least one total keyword is required")
        if not 0 < self.proximity_radius <= math.sqrt(2):
            raise ValueError(f"proximity_radius must lie in (0, sqrt 2], got {self.proximity_radius}")
        for pattern in self.date_patterns:
            re.compile(pattern)

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "RuleConfig":
        known = RuleConfig.__dataclass_fields__
        return RuleConfig(**{k: v for k, v in data.items() if k in known})


def is_amount(text: str) -> bool:
    return any(_AMOUNT_RE.match(token) for token in text.split())


def is_digit_heavy(text: str) -> bool:
    """Phone numbers, registration numbers and dates: long tokens that are mostly digits."""
    for token in text.split():
        digits = sum(ch.isdigit() for ch in token)
        if len(token) >= 6 and digits / len(token) >= 0.6:
            return True
    return False


def rule_tag_boxes(invoice: Invoice, cfg: Optional[RuleConfig] = None) -> List[FieldLabel]:
    cfg = cfg or RuleConfig()
    boxes = invoice.boxes
    labels = [FieldLabel.NONE] * len(boxes)
    if not boxes:
        return labels
    order = reading_order(boxes)
    date_res = [re.compile(p, re.IGNORECASE) for p in cfg.date_patterns]
    keyword_res = [re.compile(rf"\b{re.escape(k)}\b", re.IGNORECASE) for k in cfg.total_keywords]

    total = _nearest_amount(invoice, order, keyword_res, cfg.proximity_radius)
    if total is not None:
        labels[total] = FieldLabel.TOTAL

    for idx in order:
        if labels[idx] is FieldLabel.NONE and any(p.search(boxes[idx].text) for p in date_res):
            labels[idx] = FieldLabel.DATE
            break

    if labels[order[0]] is FieldLabel.NONE:
        labels[order[0]] = FieldLabel.COMPANY

    taken = 0
    for idx in order[1:]:
        if taken >= cfg.max_address_boxes or labels[idx] is not FieldLabel.NONE:
            break
        text = boxes[idx].text
        if is_digit_heavy(text) or any(p.search(text) for p in keyword_res):
            break
        labels[idx] = FieldLabel.ADDRESS
        taken += 1
    return labels


def _nearest_amount(invoice: Invoice, order: List[int], keyword_res, radius: float) -> Optional[int]:
    boxes = invoice.boxes
    limit = radius * math.hypot(invoice.page_width, invoice.page_height)
    keywords = [i for i in order if any(p.search(boxes[i].text) for p in keyword_res)]
    amounts = [i for i in order if is_amount(boxes[i].text)]
    best_key = None
    best: Optional[int] = None
    for rank, k in enumerate(keywords):
        kx, ky = boxes[k].center()
        tolerance = boxes[k].height() / 2.0
        for a in amounts:
            ax, ay = boxes[a].center()
            dist = math.hypot(ax - kx, ay - ky)
            if dist > limit:
                continue
            right_or_below = ax >= kx or ay > ky + tolerance
            key = (not right_or_below, dist, rank, order.index(a))
            if best_key is None or key < best_key:
                best_key, best = key, a
    return best


def rule_extract(invoice: Invoice, cfg: Optional[RuleConfig] = None) -> FieldPrediction:
    labels = rule_tag_boxes(invoice, cfg)
    return aggregate_fields(invoice, labels)


class RuleTagger:
    """Adapter giving the rule baseline the same predict/checkpoint surface as the learned methods."""

    def __init__(self, cfg: Optional[RuleConfig] = None):
        self.cfg = cfg or RuleConfig()
        self.cfg.validate()

    def predict(self, invoice: Invoice) -> List[Tuple[FieldLabel, float]]:
        return [(label, 1.0) for label in rule_tag_boxes(invoice, self.cfg)]

    def checkpoint_payload(self) -> Tuple[dict, List[Tuple[str, np.ndarray]]]:
        return {"kind": "rule", "rules": self.cfg.to_dict(), "labels": [label.value for label in FieldLabel]}, []

    @staticmethod
    def from_payload(meta: dict, tensors: Dict[str, np.ndarray]) -> "RuleTagger":
        return RuleTagger(RuleConfig.from_dict(meta.get("rules", {})))
