from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from models.errors import ParseError, ShapeError
from models.invoice import NUM_LABELS, BoundingBox, Invoice
from neural.core import Dense, Parameter, logsumexp, uniform_init
from neural.optim import Adam
from storage.images import load_image

logger = logging.getLogger(__name__)

LUMINANCE = np.array([0.299, 0.587, 0.114])


@dataclass
class VisualEncoderConfig:
    crop_h: int = 32
    crop_w: int = 64
    channels: int = 1
    out_dim: int = 32
    # (filters, kernel, stride) per conv layer, each followed by ReLU and a 2x2 max-pool
    conv_layers: List[Tuple[int, int, int]] = field(default_factory=lambda: [(8, 3, 1), (16, 3, 2)])

    def validate(self) -> None:
        if self.crop_h <= 0 or self.crop_w <= 0:
            raise ValueError(f"crop size must be positive, got {self.crop_h}x{self.crop_w}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.out_dim <= 0:
            raise ValueError("visual out_dim must be positive")
        for spec in self.conv_layers:
            if len(spec) != 3 or min(spec) <= 0:
                raise ValueError(f"conv layer spec must be 3 positive ints, got {spec}")


@dataclass
class ImageCrop:
    pixels: np.ndarray
    present: bool


# -- cropping -------------------------------------------------------------------------------


def page_raster(invoice: Invoice) -> Optional[np.ndarray]:
    if invoice.image is not None:
        return invoice.image
    if invoice.image_path:
        return load_image(Path(invoice.image_path))
    return None


def empty_crop(cfg: VisualEncoderConfig) -> ImageCrop:
    return ImageCrop(np.zeros((cfg.crop_h, cfg.crop_w, cfg.channels)), False)


def crop_and_resize(
    image: Optional[np.ndarray],
    box: BoundingBox,
    cfg: VisualEncoderConfig,
    page_width: Optional[float] = None,
    page_height: Optional[float] = None,
) -> ImageCrop:
    if image is None:
        return empty_crop(cfg)
    raster = np.asarray(image, dtype=np.float64)
    if raster.ndim == 2:
        raster = raster[:, :, None]
    img_h, img_w = raster.shape[:2]
    # page coordinates map onto the raster by the size ratio (renders may be downscaled)
    sx = img_w / (page_width or img_w)
    sy = img_h / (page_height or img_h)
    x0, y0, x1, y1 = box.hull()
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return empty_crop(cfg)
    c0 = min(max(int(math.floor(x0 * sx)), 0), img_w)
    c1 = min(max(int(math.ceil(x1 * sx)), 0), img_w)
    r0 = min(max(int(math.floor(y0 * sy)), 0), img_h)
    r1 = min(max(int(math.ceil(y1 * sy)), 0), img_h)
    if c1 <= c0 or r1 <= r0:
        return empty_crop(cfg)
    region = _to_channels(raster[r0:r1, c0:c1], cfg.channels)
    return ImageCrop(np.clip(resize_bilinear(region, cfg.crop_h, cfg.crop_w), 0.0, 1.0), True)


def _to_channels(region: np.ndarray, channels: int) -> np.ndarray:
    if region.shape[2] == channels:
        return region
    if channels == 1:
        if region.shape[2] == 1:
            return region
        return (region[:, :, :3] @ LUMINANCE)[:, :, None]
    if region.shape[2] == 1:
        return np.repeat(region, 3, axis=2)
    return region[:, :, :3]


def resize_bilinear(region: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resize of an (h, w, c) array."""
    in_h, in_w = region.shape[:2]
    ys = _sample_grid(in_h, out_h)
    xs = _sample_grid(in_w, out_w)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top_left = region[y0][:, x0]
    top_right = region[y0][:, x1]
    bottom_left = region[y1][:, x0]
    bottom_right = region[y1][:, x1]
    top = top_left + (top_right - top_left) * wx
    bottom = bottom_left + (bottom_right - bottom_left) * wx
    return top + (bottom - top) * wy


def _sample_grid(size_in: int, size_out: int) -> np.ndarray:
    if size_out == 1:
        return np.array([(size_in - 1) / 2.0])
    return np.arange(size_out) * ((size_in - 1) / (size_out - 1))


# -- encoder --------------------------------------------------------------------------------


@dataclass
class ConvLayer:
    W: Parameter
    b: Parameter
    kernel: int
    stride: int


def _same_padding(size: int, kernel: int, stride: int) -> Tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + kernel - size, 0)
    return out, total // 2, total - total // 2


def conv_forward(x: np.ndarray, layer: ConvLayer) -> Tuple[np.ndarray, np.ndarray]:
    k, s = layer.kernel, layer.stride
    n, h, w, c = x.shape
    ho, top, bottom = _same_padding(h, k, s)
    wo, left, right = _same_padding(w, k, s)
    xp = np.pad(x, ((0, 0), (top, bottom), (left, right), (0, 0)))
    windows = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
    cols = windows.reshape(n, ho, wo, c * k * k)
    return cols @ layer.W.value + layer.b.value, cols


def conv_backward(
    x_shape: Tuple[int, ...], cols: np.ndarray, layer: ConvLayer, d_out: np.ndarray, need_input: bool
) -> Optional[np.ndarray]:
    k, s = layer.kernel, layer.stride
    n, h, w, c = x_shape
    ho, top, bottom = _same_padding(h, k, s)
    wo, left, right = _same_padding(w, k, s)
    f = d_out.shape[-1]
    layer.W.grad += cols.reshape(-1, cols.shape[-1]).T @ d_out.reshape(-1, f)
    layer.b.grad += d_out.reshape(-1, f).sum(axis=0)
    if not need_input:
        return None
    d_cols = (d_out @ layer.W.value.T).reshape(n, ho, wo, c, k, k)
    d_xp = np.zeros((n, h + top + bottom, w + left + right, c))
    for ki in range(k):
        for kj in range(k):
            d_xp[:, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s, :] += d_cols[..., ki, kj]
    return d_xp[:, top:top + h, left:left + w]


def pool_forward(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    n, h, w, c = x.shape
    ho, wo = (h + 1) // 2, (w + 1) // 2
    xp = np.full((n, 2 * ho, 2 * wo, c), -np.inf)
    xp[:, :h, :w] = x
    blocks = xp.reshape(n, ho, 2, wo, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = np.argmax(blocks, axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def pool_backward(x_shape: Tuple[int, ...], idx: np.ndarray, d_out: np.ndarray) -> np.ndarray:
    n, h, w, c = x_shape
    ho, wo = idx.shape[1], idx.shape[2]
    d_blocks = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(d_blocks, idx[..., None], d_out[..., None], axis=-1)
    d_xp = d_blocks.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, 2 * ho, 2 * wo, c)
    return d_xp[:, :h, :w]


@dataclass
class _EncoderTrace:
    shapes: List[Tuple[int, ...]]
    cols: List[np.ndarray]
    pre: List[np.ndarray]
    pool_idx: List[np.ndarray]
    flat: np.ndarray
    dense_pre: np.ndarray


class VisualEncoder:
    """conv (same padding) -> ReLU -> 2x2 max-pool per layer, then dense -> ReLU."""

    def __init__(self, cfg: VisualEncoderConfig, rng: np.random.Generator, name: str = "visual"):
        cfg.validate()
        self.cfg = cfg
        self.layers: List[ConvLayer] = []
        h, w, c = cfg.crop_h, cfg.crop_w, cfg.channels
        for idx, (filters, kernel, stride) in enumerate(cfg.conv_layers):
            fan_in = c * kernel * kernel
            self.layers.append(
                ConvLayer(
                    W=Parameter(f"{name}.conv{idx}.W", uniform_init(rng, (fan_in, filters), fan_in)),
                    b=Parameter(f"{name}.conv{idx}.b", np.zeros(filters)),
                    kernel=kernel,
                    stride=stride,
                )
            )
            h, w = -(-h // stride), -(-w // stride)
            h, w = (h + 1) // 2, (w + 1) // 2
            c = filters
        self.flat_dim = h * w * c
        self.dense = Dense.create(f"{name}.dense", self.flat_dim, cfg.out_dim, rng)

    @property
    def out_dim(self) -> int:
        return self.cfg.out_dim

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        for layer in self.layers:
            params.extend([layer.W, layer.b])
        return params + self.dense.parameters()

    def check_input(self, crops: np.ndarray) -> None:
        expected = (self.cfg.crop_h, self.cfg.crop_w, self.cfg.channels)
        if crops.ndim != 4 or crops.shape[1:] != expected:
            raise ShapeError(f"visual encoder expects crops of shape {expected}, got {crops.shape[1:]}")

    def forward(self, crops: np.ndarray) -> Tuple[np.ndarray, _EncoderTrace]:
        self.check_input(crops)
        trace = _EncoderTrace(shapes=[], cols=[], pre=[], pool_idx=[], flat=np.zeros(0), dense_pre=np.zeros(0))
        x = crops
        for layer in self.layers:
            trace.shapes.append(x.shape)
            pre, cols = conv_forward(x, layer)
            trace.cols.append(cols)
            trace.pre.append(pre)
            x, idx = pool_forward(np.maximum(pre, 0.0))
            trace.pool_idx.append(idx)
        trace.flat = x.reshape(x.shape[0], -1)
        trace.dense_pre = self.dense.forward(trace.flat)
        return np.maximum(trace.dense_pre, 0.0), trace

    def backward(self, trace: _EncoderTrace, d_out: np.ndarray) -> None:
        d = d_out * (trace.dense_pre > 0)
        d_flat = self.dense.backward(trace.flat, d)
        d_x = d_flat.reshape((d_flat.shape[0],) + trace.pool_idx[-1].shape[1:])
        for li in reversed(range(len(self.layers))):
            pre = trace.pre[li]
            d_relu = pool_backward(pre.shape, trace.pool_idx[li], d_x) * (pre > 0)
            d_x = conv_backward(trace.shapes[li], trace.cols[li], self.layers[li], d_relu, need_input=li > 0)


def visual_embed(crop: ImageCrop, encoder: VisualEncoder) -> np.ndarray:
    encoder.check_input(crop.pixels[None])
    if not crop.present:
        return np.zeros(encoder.out_dim)
    out, _ = encoder.forward(crop.pixels[None])
    return out[0]


# -- precomputed vectors --------------------------------------------------------------------


@dataclass
class PrecomputedVisual:
    dim: int
    vectors: Dict[Tuple[str, int], np.ndarray]

    def lookup(self, invoice_id: str, box_index: int) -> Optional[np.ndarray]:
        return self.vectors.get((invoice_id, box_index))


def load_precomputed(path: Path) -> PrecomputedVisual:
    vectors: Dict[Tuple[str, int], np.ndarray] = {}
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[:2] != ["invoice_id", "box_index"] or len(header) < 3:
            raise ParseError("header must be invoice_id,box_index,v0..v{d-1}", 1, path)
        dim = len(header) - 2
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != dim + 2:
                raise ParseError(f"expected {dim} values, got {len(row) - 2}", row_no, path)
            try:
                key = (row[0], int(row[1]))
                values = np.array([float(v) for v in row[2:]], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric value", row_no, path) from None
            vectors[key] = values
    logger.info("Loaded %d precomputed visual vectors (dim %d) from %s", len(vectors), dim, path)
    return PrecomputedVisual(dim=dim, vectors=vectors)


# -- head-discard pretraining ---------------------------------------------------------------


def pretrain_encoder(
    crops: np.ndarray,
    labels: np.ndarray,
    encoder: VisualEncoder,
    epochs: int = 5,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
) -> List[float]:
    """Fit the encoder as a per-box classifier, then throw the classification head away."""
    rng = np.random.default_rng(seed)
    head = Dense.create("visual.pretrain_head", encoder.out_dim, NUM_LABELS, rng)
    optim = Adam(encoder.parameters() + head.parameters(), lr=lr)
    history: List[float] = []
    n = crops.shape[0]
    if n == 0:
        return history
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            feats, trace = encoder.forward(crops[idx])
            logits = head.forward(feats)
            log_z = logsumexp(logits, axis=1)
            y = labels[idx]
            total += float(np.sum(log_z - logits[np.arange(len(idx)), y]))
            d_logits = np.exp(logits - log_z[:, None])
            d_logits[np.arange(len(idx)), y] -= 1.0
            d_logits /= len(idx)
            encoder.backward(trace, head.backward(feats, d_logits))
            optim.step()
        history.append(total / n)
        logger.debug("visual pretrain epoch %d loss %.4f", epoch + 1, history[-1])
    return history
