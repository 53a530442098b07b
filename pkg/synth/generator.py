"""Seeded synthetic receipts with the usual layout regularities.

Company name on top, address lines right under it, the date in the upper
part of the page, item lines in the middle and the total amount at the
bottom right next to a TOTAL/AMOUNT keyword.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from models.invoice import BoundingBox, FieldAnnotation, FieldLabel, Invoice, LabeledInvoice

logger = logging.getLogger(__name__)

COMPANY_WORDS = [
    "ACME", "SUNRISE", "GOLDEN", "EVERGREEN", "MEGA", "UNITED", "PERFECT", "ROYAL",
    "SILVER", "ORIENT", "PACIFIC", "HAPPY", "LUCKY", "GRAND", "PRIME", "BRIGHT",
]
COMPANY_SUFFIXES = ["SDN BHD", "ENTERPRISE", "TRADING", "RESTAURANT", "BOOKSTORE", "HARDWARE"]
STREET_WORDS = ["JALAN", "LORONG", "PERSIARAN", "LEBUH"]
STREET_NAMES = ["MERDEKA", "AMPANG", "TUN RAZAK", "BUKIT BINTANG", "SULTAN ISMAIL", "PUDU", "IPOH", "KLANG LAMA"]
CITIES = ["KUALA LUMPUR", "PETALING JAYA", "SHAH ALAM", "JOHOR BAHRU", "GEORGETOWN", "KUCHING", "MELAKA"]
STATES = ["SELANGOR", "WILAYAH PERSEKUTUAN", "JOHOR", "PULAU PINANG", "SARAWAK"]
ITEMS = [
    "NASI LEMAK", "TEH TARIK", "ROTI CANAI", "MEE GORENG", "KOPI O", "CHICKEN RICE", "PEN BLUE",
    "A4 PAPER", "STAPLER", "GLUE STICK", "MILO ICE", "CURRY PUFF", "SCREW SET", "PAINT BRUSH",
]
MONTHS = ["JAN", "FEB", "MAR", "APR", "MAY", "JUN", "JUL", "AUG", "SEP", "OCT", "NOV", "DEC"]

# flat fill per class; darker company blocks echo heavier header print
CLASS_INTENSITY: Dict[FieldLabel, float] = {
    FieldLabel.COMPANY: 0.10,
    FieldLabel.ADDRESS: 0.45,
    FieldLabel.DATE: 0.30,
    FieldLabel.TOTAL: 0.20,
    FieldLabel.NONE: 0.65,
}

LINE_HEIGHT = 18.0


@dataclass
class SynthConfig:
    n_invoices: int = 200
    seed: int = 7
    page_width: float = 600.0
    page_height: float = 1000.0
    min_items: int = 5
    max_items: int = 15
    # fraction of the page size
    jitter: float = 0.03
    time_probability: float = 0.1
    render: bool = False
    render_scale: float = 0.25
    company_words: List[str] = field(default_factory=lambda: list(COMPANY_WORDS))
    street_words: List[str] = field(default_factory=lambda: list(STREET_WORDS))
    cities: List[str] = field(default_factory=lambda: list(CITIES))

    def validate(self) -> None:
        if self.n_invoices < 1:
            raise ValueError(f"n_invoices must be >= 1, got {self.n_invoices}")
        if not 1 <= self.min_items <= self.max_items:
            raise ValueError(f"item range {self.min_items}..{self.max_items} is invalid")
        if not 0.0 <= self.jitter <= 0.03:
            raise ValueError(f"jitter must lie in [0, 0.03], got {self.jitter}")
        if not 0.0 <= self.time_probability <= 1.0:
            raise ValueError("time_probability must lie in [0, 1]")
        if not 0.0 < self.render_scale <= 1.0:
            raise ValueError("render_scale must lie in (0, 1]")
        if self.page_width != 600.0 or self.page_height != 1000.0:
            logger.debug("Non-default page %sx%s; layout is scaled", self.page_width, self.page_height)

    def to_dict(self) -> dict:
        return asdict(self)


class _Page:
    """Accumulates boxes in the 600x1000 design frame, scaled to the configured page."""

    def __init__(self, cfg: SynthConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.sx = cfg.page_width / 600.0
        self.sy = cfg.page_height / 1000.0
        self.dy = float(rng.uniform(-cfg.jitter, cfg.jitter)) * 1000.0
        self.boxes: List[BoundingBox] = []
        self.labels: List[FieldLabel] = []

    def add(self, text: str, x: float, y: float, height: float, label: FieldLabel, char_w: float = 9.0) -> None:
        dx = float(self.rng.uniform(-self.cfg.jitter, self.cfg.jitter)) * 600.0
        width = max(char_w * len(text), char_w)
        x0 = min(max(x + dx, 2.0), 598.0 - width)
        y0 = y + self.dy
        coords = [x0, y0, x0 + width, y0, x0 + width, y0 + height, x0, y0 + height]
        scaled = [round(v * (self.sx if i % 2 == 0 else self.sy)) for i, v in enumerate(coords)]
        self.boxes.append(BoundingBox.from_coords(scaled, text))
        self.labels.append(label)


def _pick(rng: np.random.Generator, values: List[str]) -> str:
    return values[int(rng.integers(len(values)))]


def _date_text(rng: np.random.Generator) -> str:
    day, month, year = int(rng.integers(1, 29)), int(rng.integers(1, 13)), int(rng.integers(2015, 2020))
    style = int(rng.integers(4))
    if style == 0:
        return f"{day:02d}/{month:02d}/{year}"
    if style == 1:
        return f"{year}-{month:02d}-{day:02d}"
    if style == 2:
        return f"{day:02d}.{month:02d}.{year}"
    return f"{day:02d} {MONTHS[month - 1]} {year}"


def _time_text(rng: np.random.Generator) -> str:
    hh, mm, ss = int(rng.integers(0, 24)), int(rng.integers(0, 60)), int(rng.integers(0, 60))
    return f"{hh:02d}:{mm:02d}:{ss:02d}" if rng.random() < 0.5 else f"{hh:02d}:{mm:02d}"


def generate_one(cfg: SynthConfig, index: int) -> LabeledInvoice:
    rng = np.random.default_rng([cfg.seed, index])
    page = _Page(cfg, rng)

    n_words = 1 + int(rng.integers(2))
    words = [_pick(rng, cfg.company_words) for _ in range(n_words)]
    company = " ".join(words + [_pick(rng, COMPANY_SUFFIXES)])
    page.add(company, 300.0 - 7.5 * len(company), 40.0, 36.0, FieldLabel.COMPANY, char_w=15.0)

    address_lines = [
        f"NO {int(rng.integers(1, 300))}, {_pick(rng, cfg.street_words)} {_pick(rng, STREET_NAMES)}",
        f"{int(rng.integers(10000, 99999))} {_pick(rng, cfg.cities)}",
    ]
    if rng.random() < 0.5:
        address_lines.append(_pick(rng, STATES))
    y = 88.0
    for line in address_lines:
        page.add(line, 300.0 - 4.5 * len(line), y, LINE_HEIGHT, FieldLabel.ADDRESS)
        y += 25.0

    date = _date_text(rng)
    date_box = date
    if rng.random() < cfg.time_probability:
        date_box = f"{date} {_time_text(rng)}"
    date_y = y + 20.0
    page.add("DATE:", 40.0, date_y, LINE_HEIGHT, FieldLabel.NONE)
    page.add(date_box, 110.0, date_y, LINE_HEIGHT, FieldLabel.DATE)

    n_items = int(rng.integers(cfg.min_items, cfg.max_items + 1))
    prices = [int(rng.integers(50, 5000)) for _ in range(n_items)]
    y = 260.0
    step = min(35.0, 520.0 / n_items)
    for cents in prices:
        page.add(_pick(rng, ITEMS), 40.0, y, LINE_HEIGHT, FieldLabel.NONE)
        page.add(f"{cents / 100:.2f}", 480.0, y, LINE_HEIGHT, FieldLabel.NONE)
        y += step

    if rng.random() < 0.5:
        page.add("TOTAL QTY:", 330.0, 800.0, LINE_HEIGHT, FieldLabel.NONE)
        page.add(str(n_items), 480.0, 800.0, LINE_HEIGHT, FieldLabel.NONE)
    # the sum of at least two positive prices never equals a single item price
    total = f"{sum(prices) / 100:.2f}"
    total_box = f"RM {total}" if rng.random() < 0.3 else total
    page.add(_pick(rng, ["TOTAL", "AMOUNT", "TOTAL AMOUNT"]), 330.0, 850.0, 22.0, FieldLabel.NONE)
    page.add(total_box, 470.0, 850.0, 22.0, FieldLabel.TOTAL)
    page.add("THANK YOU", 250.0, 930.0, LINE_HEIGHT, FieldLabel.NONE)

    invoice = Invoice(
        id=f"synth{index:05d}",
        page_width=cfg.page_width,
        page_height=cfg.page_height,
        boxes=page.boxes,
    )
    if cfg.render:
        invoice.image = render_page(invoice, page.labels, cfg.render_scale)
    ann = FieldAnnotation(company=company, date=date, address=" ".join(address_lines), total=total)
    return LabeledInvoice(invoice=invoice, labels=page.labels, annotation=ann)


def generate(cfg: Optional[SynthConfig] = None) -> List[LabeledInvoice]:
    cfg = cfg or SynthConfig()
    cfg.validate()
    items = [generate_one(cfg, i) for i in range(cfg.n_invoices)]
    logger.info("Generated %d synthetic invoices (seed %d)", len(items), cfg.seed)
    return items


def render_page(invoice: Invoice, labels: List[FieldLabel], scale: float = 0.25) -> np.ndarray:
    """White page with every box filled by its class intensity, (h, w, 3) float32."""
    h = max(int(round(invoice.page_height * scale)), 1)
    w = max(int(round(invoice.page_width * scale)), 1)
    page = np.ones((h, w), dtype=np.float32)
    for box, label in zip(invoice.boxes, labels):
        x0, y0, x1, y1 = box.hull()
        r0, r1 = int(y0 * scale), max(int(np.ceil(y1 * scale)), int(y0 * scale) + 1)
        c0, c1 = int(x0 * scale), max(int(np.ceil(x1 * scale)), int(x0 * scale) + 1)
        page[r0:r1, c0:c1] = CLASS_INTENSITY[label]
    return np.repeat(page[:, :, None], 3, axis=2)


def layout_checks(item: LabeledInvoice) -> List[str]:
    """Violations of the layout priors (empty when the invoice follows them)."""
    inv = item.invoice
    problems: List[str] = []
    for box, label in zip(inv.boxes, item.labels):
        cx, cy = box.center()
        if label is FieldLabel.COMPANY and cy >= 0.15 * inv.page_height:
            problems.append(f"{inv.id}: company center y {cy} not in the top 15%")
        if label is FieldLabel.DATE and cy >= 0.30 * inv.page_height:
            problems.append(f"{inv.id}: date center y {cy} not in the top 30%")
        if label is FieldLabel.TOTAL and (cx <= inv.page_width / 2 or cy <= inv.page_height / 2):
            problems.append(f"{inv.id}: total center ({cx}, {cy}) not in the bottom-right quadrant")
    return problems


def label_counts(items: List[LabeledInvoice]) -> Tuple[int, Dict[str, int]]:
    counts = {label.value: 0 for label in FieldLabel}
    for item in items:
        for label in item.labels:
            counts[label.value] += 1
    return sum(counts.values()), counts
