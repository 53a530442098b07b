"""Per-box tags -> the four field strings."""

from __future__ import annotations

import re
from typing import Dict, List, Optional, Sequence

from models.corpus import reading_order
from models.invoice import FieldLabel, FieldPrediction, Invoice

MONTHS = "JAN|FEB|MAR|APR|MAY|JUN|JUL|AUG|SEP|SEPT|OCT|NOV|DEC"

# NUM/NUM/NUM with one separator used twice, e.g. 26/02/1998, 2018-03-01, 01.03.18
NUMERIC_DATE = r"(?<!\d)\d{1,4}([/.\-])\d{1,4}\1\d{1,4}(?!\d)"
# NUM MONTHNAME NUM, e.g. 26 FEB 1998, 26-Feb-98, 5 March, 2019
MONTH_DATE = rf"(?<!\d)\d{{1,2}}[\s/.\-]*(?:{MONTHS})[A-Z]*\.?[\s/.\-,]*\d{{2,4}}(?!\d)"

_DATE_RES = (re.compile(NUMERIC_DATE), re.compile(MONTH_DATE, re.IGNORECASE))


def find_date(text: str) -> Optional[str]:
    """Earliest date-template match in ``text``."""
    best: Optional[re.Match] = None
    for pattern in _DATE_RES:
        match = pattern.search(text)
        if match and (best is None or match.start() < best.start()):
            best = match
    return best.group(0) if best else None


def refine_date(text: str) -> str:
    found = find_date(text)
    return found if found is not None else text


def clean_total(text: str) -> str:
    """'RM 7.50' -> '7.50': keep digits and separators, at most one decimal point."""
    kept = re.sub(r"[^\d.,]", "", text).strip(".,")
    if not any(ch.isdigit() for ch in kept):
        return ""
    if kept.count(".") > 1:
        head, _, tail = kept.rpartition(".")
        kept = head.replace(".", "") + "." + tail
    return kept


def aggregate_fields(
    invoice: Invoice,
    labels: Sequence[FieldLabel],
    confidences: Optional[Sequence[float]] = None,
    order: Optional[Sequence[int]] = None,
) -> FieldPrediction:
    if len(labels) != len(invoice.boxes):
        raise ValueError(f"{invoice.id}: {len(labels)} labels for {len(invoice.boxes)} boxes")
    conf = list(confidences) if confidences is not None else [1.0] * len(labels)
    perm = list(order) if order is not None else reading_order(invoice.boxes)
    texts: Dict[FieldLabel, List[str]] = {label: [] for label in FieldLabel}
    best: Dict[FieldLabel, int] = {}
    for idx in perm:
        label = labels[idx]
        texts[label].append(invoice.boxes[idx].text.strip())
        # strictly greater keeps the earliest box in reading order on ties
        if label not in best or conf[idx] > conf[best[label]]:
            best[label] = idx

    pred = FieldPrediction(
        company=" ".join(texts[FieldLabel.COMPANY]),
        address=" ".join(texts[FieldLabel.ADDRESS]),
    )
    if FieldLabel.DATE in best:
        pred.date = refine_date(invoice.boxes[best[FieldLabel.DATE]].text.strip())
    if FieldLabel.TOTAL in best:
        pred.total = clean_total(invoice.boxes[best[FieldLabel.TOTAL]].text)
    return pred
