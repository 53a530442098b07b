from __future__ import annotations

import json
from pathlib import Path
from typing import List, Sequence, Union

from evaluation.metrics import EvalReport
from models.invoice import FIELD_LABELS

REPORT_FORMATS = ("json", "table")

_COLUMNS = ("method", "box acc", "box macro-F1", "field F1") + tuple(label.value for label in FIELD_LABELS)


def _as_list(reports: Union[EvalReport, Sequence[EvalReport]]) -> List[EvalReport]:
    if isinstance(reports, EvalReport):
        return [reports]
    return list(reports)


def emit_report(reports: Union[EvalReport, Sequence[EvalReport]], fmt: str = "json") -> bytes:
    items = _as_list(reports)
    if fmt == "json":
        doc = {"reports": [r.to_dict() for r in items]}
        return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")
    if fmt == "table":
        return _table(items).encode("utf-8")
    raise ValueError(f"unknown report format {fmt!r}, expected one of {REPORT_FORMATS}")


def parse_report(raw: bytes) -> List[EvalReport]:
    doc = json.loads(raw.decode("utf-8"))
    return [EvalReport.from_dict(item) for item in doc["reports"]]


def _pct(value: float) -> str:
    return f"{100.0 * value:.1f}"


def _table(items: Sequence[EvalReport]) -> str:
    rows = [list(_COLUMNS)]
    for r in items:
        rows.append(
            [r.method, _pct(r.boxes.accuracy), _pct(r.boxes.macro_f1), _pct(r.fields.micro.f1)]
            + [_pct(r.fields.per_field[label.value].f1) if label.value in r.fields.per_field else "-" for label in FIELD_LABELS]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(_COLUMNS))]
    lines = []
    for n, row in enumerate(rows):
        cells = [row[0].ljust(widths[0])] + [cell.rjust(w) for cell, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
        if n == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report(path: Path, reports: Union[EvalReport, Sequence[EvalReport]], fmt: str = "json") -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(emit_report(reports, fmt))
    return path
