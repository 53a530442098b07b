from __future__ import annotations

from typing import Sequence

import numpy as np

from models.invoice import BoundingBox

SPATIAL_DIM = 6
SPATIAL_COLUMNS = ("cx", "cy", "bw", "bh", "area_ratio", "char_density")
DENSITY_EPS = 1.0


def box_area(box: BoundingBox) -> float:
    """Area of the axis-aligned hull of the corners, |x1 - x2| * |y1 - y3| for upright boxes."""
    x0, y0, x1, y1 = box.hull()
    return max(0.0, x1 - x0) * max(0.0, y1 - y0)


def visible_chars(text: str) -> int:
    return sum(1 for ch in text if not ch.isspace())


def char_density(box: BoundingBox) -> float:
    return visible_chars(box.text) / max(box_area(box), DENSITY_EPS)


def spatial_vector(box: BoundingBox, page_width: float, page_height: float) -> np.ndarray:
    if page_width <= 0 or page_height <= 0:
        raise ValueError(f"Page size must be positive, got {page_width}x{page_height}")
    x0, y0, x1, y1 = box.hull()
    cx = (x0 + x1) / 2.0
    cy = (y0 + y1) / 2.0
    area_ratio = min(1.0, max(0.0, box_area(box) / (page_width * page_height)))
    return np.array(
        [
            _unit(cx / page_width),
            _unit(cy / page_height),
            _unit((x1 - x0) / page_width),
            _unit((y1 - y0) / page_height),
            area_ratio,
            char_density(box),
        ],
        dtype=np.float64,
    )


def spatial_matrix(boxes: Sequence[BoundingBox], page_width: float, page_height: float) -> np.ndarray:
    if not boxes:
        return np.zeros((0, SPATIAL_DIM), dtype=np.float64)
    return np.stack([spatial_vector(box, page_width, page_height) for box in boxes])


def _unit(value: float) -> float:
    return min(1.0, max(0.0, value))
