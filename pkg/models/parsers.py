from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import List, Optional

from models.errors import EmptyCorpusError, ParseError
from models.invoice import BoundingBox, FieldAnnotation

logger = logging.getLogger(__name__)

ANNOTATION_KEYS = ("company", "date", "address", "total")


def parse_box_line(
    line: str,
    line_no: int,
    page_width: Optional[float] = None,
    page_height: Optional[float] = None,
) -> Optional[BoundingBox]:
    raw = line.strip()
    if not raw:
        return None
    # the transcript may itself contain commas ("1,000.00")
    parts = raw.split(",", 8)
    if len(parts) < 9:
        raise ParseError(f"expected 8 coordinates and a transcript, got {len(parts)} fields", line_no)
    coords: List[float] = []
    for part in parts[:8]:
        try:
            value = float(part.strip())
        except ValueError:
            raise ParseError(f"non-numeric coordinate {part.strip()!r}", line_no) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite coordinate {part.strip()!r}", line_no)
        coords.append(value)
    text = parts[8].strip()
    if not text:
        logger.warning("Line %d has an empty transcript, skipped", line_no)
        return None
    coords = _clamp(coords, page_width, page_height)
    return BoundingBox.from_coords(coords, text)


def parse_box_file(
    raw_text: str,
    page_width: Optional[float] = None,
    page_height: Optional[float] = None,
) -> List[BoundingBox]:
    if not raw_text.strip():
        raise EmptyCorpusError("box file has no lines")
    boxes: List[BoundingBox] = []
    for line_no, line in enumerate(raw_text.splitlines(), start=1):
        box = parse_box_line(line, line_no, page_width, page_height)
        if box:
            boxes.append(box)
    if not boxes:
        raise EmptyCorpusError("box file has no usable boxes")
    return boxes


def format_box_file(boxes: List[BoundingBox]) -> str:
    lines = []
    for box in boxes:
        coords = ",".join(_format_coord(v) for v in box.coords())
        lines.append(f"{coords},{box.text}")
    return "\n".join(lines) + "\n"


def parse_annotation(raw_text: str) -> FieldAnnotation:
    try:
        data = json.loads(raw_text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    if not isinstance(data, dict):
        raise ParseError("annotation must be a JSON object")
    unknown = sorted(set(data) - set(ANNOTATION_KEYS))
    if unknown:
        raise ParseError(f"unknown annotation keys: {', '.join(unknown)}")
    for key in ANNOTATION_KEYS:
        if key in data and not isinstance(data[key], str):
            raise ParseError(f"annotation key {key!r} must be a string")
    return FieldAnnotation.from_dict(data)


def format_annotation(ann: FieldAnnotation) -> str:
    return json.dumps(ann.to_dict(), indent=2, ensure_ascii=False) + "\n"


def read_text_guess(path: Path) -> str:
    raw = path.read_bytes()
    if raw.startswith(b"\xef\xbb\xbf"):
        try:
            return raw.decode("utf-8-sig")
        except UnicodeDecodeError:
            pass

    for enc in ("utf-8", "cp1252"):
        try:
            return raw.decode(enc)
        except UnicodeDecodeError:
            continue
    return raw.decode("latin-1")


def _clamp(coords: List[float], page_width: Optional[float], page_height: Optional[float]) -> List[float]:
    out: List[float] = []
    for idx, value in enumerate(coords):
        limit = page_width if idx % 2 == 0 else page_height
        value = max(0.0, value)
        if limit is not None:
            value = min(value, float(limit))
        out.append(value)
    return out


def _format_coord(value: float) -> str:
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))
