from __future__ import annotations

import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from models.corpus import align_labels
from models.errors import CorpusError, EmptyCorpusError, ParseError
from models.invoice import BoundingBox, FieldAnnotation, Invoice, LabeledInvoice
from models.parsers import format_annotation, format_box_file, parse_annotation, parse_box_file, read_text_guess
from storage.images import find_image, image_size, save_image

logger = logging.getLogger(__name__)

BOX_SUFFIX = ".txt"
ANNOTATION_SUFFIX = ".json"


def _check_folder(folder: Path) -> None:
    if not folder.exists():
        raise CorpusError(f"Corpus directory not found: {folder}")
    if not folder.is_dir():
        raise CorpusError(f"Corpus path is not a directory: {folder}")


def _box_files(folder: Path) -> List[Path]:
    _check_folder(folder)
    # config.json and friends are not corpus members
    files = sorted(p for p in folder.glob(f"*{BOX_SUFFIX}") if p.is_file())
    if not files:
        raise EmptyCorpusError(f"No {BOX_SUFFIX} box files in {folder}")
    return files


def _page_extent(boxes: List[BoundingBox]) -> Tuple[float, float]:
    width = max(max(b.hull()[2] for b in boxes), 1.0)
    height = max(max(b.hull()[3] for b in boxes), 1.0)
    return width, height


def read_invoice(box_path: Path) -> Invoice:
    stem = box_path.stem
    image_path = find_image(box_path.parent, stem)
    width: Optional[float] = None
    height: Optional[float] = None
    if image_path is not None:
        w, h = image_size(image_path)
        width, height = float(w), float(h)
    try:
        boxes = parse_box_file(read_text_guess(box_path), width, height)
    except ParseError as exc:
        raise ParseError(exc.reason, exc.line, box_path) from None
    except EmptyCorpusError as exc:
        raise EmptyCorpusError(f"{box_path}: {exc}") from None
    if width is None or height is None:
        width, height = _page_extent(boxes)
    return Invoice(
        id=stem,
        page_width=width,
        page_height=height,
        boxes=boxes,
        image_path=str(image_path) if image_path else None,
    )


def read_annotation(path: Path) -> FieldAnnotation:
    try:
        return parse_annotation(read_text_guess(path))
    except ParseError as exc:
        raise ParseError(exc.reason, exc.line, path) from None


def load_invoices(folder: Path) -> List[Invoice]:
    """Unlabelled invoices of a corpus directory (annotations are not read)."""
    invoices = [read_invoice(p) for p in _box_files(folder)]
    logger.info("Loaded %d invoices from %s", len(invoices), folder)
    return invoices


def load_corpus(folder: Path) -> List[LabeledInvoice]:
    out: List[LabeledInvoice] = []
    for box_path in _box_files(folder):
        ann_path = box_path.with_suffix(ANNOTATION_SUFFIX)
        if not ann_path.exists():
            raise CorpusError(f"Missing annotation for {box_path.name}: expected {ann_path}")
        invoice = read_invoice(box_path)
        out.append(align_labels(invoice, read_annotation(ann_path)))
    with_images = sum(1 for item in out if item.invoice.has_image())
    logger.info("Loaded %d annotated invoices from %s (%d with images)", len(out), folder, with_images)
    return out


def write_corpus(folder: Path, items: Sequence[LabeledInvoice]) -> Path:
    folder.mkdir(parents=True, exist_ok=True)
    for item in items:
        invoice = item.invoice
        (folder / f"{invoice.id}{BOX_SUFFIX}").write_text(format_box_file(invoice.boxes), encoding="utf-8")
        (folder / f"{invoice.id}{ANNOTATION_SUFFIX}").write_text(format_annotation(item.annotation), encoding="utf-8")
        if invoice.image is not None:
            # rasters are stored at page resolution so the image size is the page size on reload
            size = (int(round(invoice.page_width)), int(round(invoice.page_height)))
            save_image(folder / f"{invoice.id}.png", invoice.image, size=size)
    logger.info("Wrote %d invoices to %s", len(items), folder)
    return folder
