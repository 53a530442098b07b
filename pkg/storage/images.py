from __future__ import annotations

from pathlib import Path
from typing import Optional, Tuple

import numpy as np
from PIL import Image


IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png")


def load_image(path: Path) -> np.ndarray:
    """8-bit raster -> (height, width, 3) float64 intensities in [0, 1]."""
    with Image.open(path) as img:
        data = np.asarray(img.convert("RGB"), dtype=np.float64)
    return data / 255.0


def image_size(path: Path) -> Tuple[int, int]:
    with Image.open(path) as img:
        return img.size


def save_image(path: Path, raster: np.ndarray, size: Optional[Tuple[int, int]] = None) -> None:
    """Write a [0, 1] raster as 8-bit RGB; ``size`` (width, height) rescales with nearest-neighbour."""
    data = np.clip(np.asarray(raster, dtype=np.float64), 0.0, 1.0)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    pixels = np.round(data * 255.0).astype(np.uint8)
    img = Image.fromarray(pixels)
    if size is not None and img.size != size:
        img = img.resize(size, Image.NEAREST)
    path.parent.mkdir(parents=True, exist_ok=True)
    img.save(path)


def find_image(folder: Path, stem: str) -> Optional[Path]:
    for suffix in IMAGE_SUFFIXES:
        for candidate in (folder / f"{stem}{suffix}", folder / f"{stem}{suffix.upper()}"):
            if candidate.exists():
                return candidate
    return None
