from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.errors import CorpusError


class FieldLabel(str, Enum):
    """Per-box class. Declaration order fixes the label ids used by every model."""

    COMPANY = "company"
    ADDRESS = "address"
    DATE = "date"
    TOTAL = "total"
    NONE = "none"

    @property
    def id(self) -> int:
        return _LABEL_IDS[self]

    @staticmethod
    def from_id(label_id: int) -> "FieldLabel":
        idx = int(label_id)
        if not 0 <= idx < len(LABELS):
            raise ValueError(f"Label id out of range: {label_id}")
        return LABELS[idx]


LABELS: Tuple[FieldLabel, ...] = tuple(FieldLabel)
_LABEL_IDS: Dict[FieldLabel, int] = {label: idx for idx, label in enumerate(LABELS)}
NUM_LABELS = len(LABELS)
NONE_ID = FieldLabel.NONE.id
FIELD_LABELS: Tuple[FieldLabel, ...] = tuple(label for label in LABELS if label is not FieldLabel.NONE)


@dataclass(frozen=True)
class Point:
    x: float
    y: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise CorpusError(f"Non-finite point ({self.x}, {self.y})")
        if self.x < 0 or self.y < 0:
            raise CorpusError(f"Negative point ({self.x}, {self.y})")


@dataclass(frozen=True)
class BoundingBox:
    # top-left, top-right, bottom-right, bottom-left
    corners: Tuple[Point, Point, Point, Point]
    text: str

    def __post_init__(self) -> None:
        if len(self.corners) != 4:
            raise CorpusError(f"Bounding box needs 4 corners, got {len(self.corners)}")
        if not self.text.strip():
            raise CorpusError("Bounding box transcript is empty")

    @staticmethod
    def from_coords(coords: List[float], text: str) -> "BoundingBox":
        pts = tuple(Point(float(coords[i]), float(coords[i + 1])) for i in range(0, 8, 2))
        return BoundingBox(corners=pts, text=text)  # type: ignore[arg-type]

    def coords(self) -> List[float]:
        out: List[float] = []
        for pt in self.corners:
            out.extend((pt.x, pt.y))
        return out

    def hull(self) -> Tuple[float, float, float, float]:
        xs = [pt.x for pt in self.corners]
        ys = [pt.y for pt in self.corners]
        return min(xs), min(ys), max(xs), max(ys)

    def center(self) -> Tuple[float, float]:
        x0, y0, x1, y1 = self.hull()
        return (x0 + x1) / 2.0, (y0 + y1) / 2.0

    def height(self) -> float:
        _, y0, _, y1 = self.hull()
        return y1 - y0

    def to_dict(self) -> dict:
        return {"coords": self.coords(), "text": self.text}


@dataclass
class Invoice:
    id: str
    page_width: float
    page_height: float
    boxes: List[BoundingBox]
    image: Optional[np.ndarray] = None
    image_path: Optional[str] = None

    def has_image(self) -> bool:
        return self.image is not None or bool(self.image_path)


@dataclass
class FieldValues:
    company: str = ""
    date: str = ""
    address: str = ""
    total: str = ""

    def value(self, label: FieldLabel) -> str:
        if label is FieldLabel.NONE:
            return ""
        return getattr(self, label.value)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict):
        return cls(**{f.name: data.get(f.name, "") for f in fields(cls)})


@dataclass
class FieldAnnotation(FieldValues):
    pass


@dataclass
class FieldPrediction(FieldValues):
    pass


@dataclass
class AlignmentCoverage:
    matched: Dict[str, int] = field(default_factory=dict)
    missing: List[str] = field(default_factory=list)

    def warnings(self, invoice_id: str) -> List[str]:
        return [f"{invoice_id}: annotated {name} matched no box" for name in self.missing]


@dataclass
class LabeledInvoice:
    invoice: Invoice
    labels: List[FieldLabel]
    annotation: FieldAnnotation = field(default_factory=FieldAnnotation)
    coverage: Optional[AlignmentCoverage] = None

    def __post_init__(self) -> None:
        if len(self.labels) != len(self.invoice.boxes):
            raise CorpusError(
                f"{self.invoice.id}: {len(self.labels)} labels for {len(self.invoice.boxes)} boxes"
            )

    @property
    def id(self) -> str:
        return self.invoice.id

    def label_ids(self) -> List[int]:
        return [label.id for label in self.labels]
