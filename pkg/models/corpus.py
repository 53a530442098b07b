from __future__ import annotations

import logging
import math
import statistics
from typing import Dict, List, Sequence, Tuple

import numpy as np

from models.errors import CorpusError, EmptyCorpusError
from models.invoice import (
    AlignmentCoverage,
    BoundingBox,
    FieldAnnotation,
    FieldLabel,
    Invoice,
    LabeledInvoice,
)

logger = logging.getLogger(__name__)

# rarer/shorter fields win when a box matches several
ALIGN_PRIORITY: Tuple[FieldLabel, ...] = (
    FieldLabel.TOTAL,
    FieldLabel.DATE,
    FieldLabel.COMPANY,
    FieldLabel.ADDRESS,
)
# fields whose gold string may sit inside a longer box ("26/02/1998 18:12")
_CONTAINED_FIELDS = (FieldLabel.TOTAL, FieldLabel.DATE)


def normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


def align_labels(invoice: Invoice, ann: FieldAnnotation) -> LabeledInvoice:
    field_tokens: Dict[FieldLabel, List[str]] = {
        label: normalize_text(ann.value(label)).split() for label in ALIGN_PRIORITY
    }
    labels: List[FieldLabel] = []
    matched = {label.value: 0 for label in ALIGN_PRIORITY}
    for box in invoice.boxes:
        tokens = normalize_text(box.text).split()
        label = FieldLabel.NONE
        for candidate in ALIGN_PRIORITY:
            gold = field_tokens[candidate]
            if not gold or not tokens:
                continue
            if _contains(gold, tokens) or (candidate in _CONTAINED_FIELDS and _contains(tokens, gold)):
                label = candidate
                break
        if label is not FieldLabel.NONE:
            matched[label.value] += 1
        labels.append(label)

    missing = [label.value for label in ALIGN_PRIORITY if field_tokens[label] and matched[label.value] == 0]
    coverage = AlignmentCoverage(matched=matched, missing=missing)
    for message in coverage.warnings(invoice.id):
        logger.warning(message)
    return LabeledInvoice(invoice=invoice, labels=labels, annotation=ann, coverage=coverage)


def reading_order(boxes: Sequence[BoundingBox]) -> List[int]:
    if not boxes:
        raise EmptyCorpusError("reading order of an empty box list")
    if len(boxes) == 1:
        return [0]
    centers = [box.center() for box in boxes]
    tolerance = statistics.median(box.height() for box in boxes) / 2.0

    by_y = sorted(range(len(boxes)), key=lambda i: (centers[i][1], centers[i][0], i))
    rows: List[List[int]] = []
    anchor = 0.0
    for idx in by_y:
        cy = centers[idx][1]
        if rows and (cy - anchor < tolerance or cy == anchor):
            rows[-1].append(idx)
            continue
        rows.append([idx])
        anchor = cy

    order: List[int] = []
    for row in rows:
        order.extend(sorted(row, key=lambda i: (centers[i][0], i)))
    return order


def split_dataset(
    invoices: Sequence[LabeledInvoice], ratio: float = 0.8, seed: int = 42
) -> Tuple[List[LabeledInvoice], List[LabeledInvoice]]:
    if not 0.0 < ratio < 1.0:
        raise CorpusError(f"split ratio must lie in (0, 1), got {ratio}")
    unique = _dedupe_preserve(invoices)
    if len(unique) < 2:
        raise EmptyCorpusError(f"need at least 2 distinct invoices to split, got {len(unique)}")
    if len(unique) != len(invoices):
        logger.info("Dropped %d duplicate invoice ids before splitting", len(invoices) - len(unique))

    n_train = math.ceil(ratio * len(unique) - 1e-9)
    n_train = min(max(n_train, 1), len(unique) - 1)
    perm = np.random.default_rng(seed).permutation(len(unique))
    train = [unique[i] for i in sorted(perm[:n_train])]
    test = [unique[i] for i in sorted(perm[n_train:])]
    return train, test


def validate_invoice(invoice: Invoice) -> List[str]:
    problems: List[str] = []
    if invoice.page_width <= 0 or invoice.page_height <= 0:
        problems.append(f"{invoice.id}: page size {invoice.page_width}x{invoice.page_height} is not positive")
    if not invoice.boxes:
        problems.append(f"{invoice.id}: no boxes")
    for idx, box in enumerate(invoice.boxes):
        if not box.text.strip():
            problems.append(f"{invoice.id}: box {idx} has an empty transcript")
        x0, y0, x1, y1 = box.hull()
        if x0 < 0 or y0 < 0 or x1 > invoice.page_width or y1 > invoice.page_height:
            problems.append(f"{invoice.id}: box {idx} lies outside the page")
    return problems


def _contains(haystack: List[str], needle: List[str]) -> bool:
    n = len(needle)
    if n > len(haystack):
        return False
    return any(haystack[i:i + n] == needle for i in range(len(haystack) - n + 1))


def _dedupe_preserve(values: Sequence[LabeledInvoice]) -> List[LabeledInvoice]:
    seen: set[str] = set()
    out: List[LabeledInvoice] = []
    for value in values:
        if value.id in seen:
            continue
        seen.add(value.id)
        out.append(value)
    return out
