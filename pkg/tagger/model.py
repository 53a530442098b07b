from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from features.spatial import SPATIAL_DIM, spatial_matrix
from features.text import (
    EmbeddingProvider,
    HashedProvider,
    TextFeatureConfig,
    TokenIndex,
    VectorFileProvider,
    embed_box,
    index_boxes,
    load_vector_file,
    pooled_lookup,
    pooled_lookup_backward,
)
from features.visual import (
    PrecomputedVisual,
    VisualEncoder,
    VisualEncoderConfig,
    crop_and_resize,
    load_precomputed,
    page_raster,
)
from models.corpus import reading_order
from models.errors import ShapeError
from models.invoice import NUM_LABELS, FieldLabel, Invoice, LabeledInvoice
from neural.core import Dense, LstmParams, Parameter, bilstm_forward, bilstm_backward
from tagger.crf import CrfParams, crf_nll, marginals, softmax, softmax_decode, softmax_nll, viterbi

logger = logging.getLogger(__name__)

DECODERS = ("crf", "softmax")


@dataclass
class TaggerConfig:
    text_dim: int = 64
    vocab_size: int = 4096
    pooling: str = "mean"
    weighting_constant: float = 1e-3
    lowercase: bool = True
    number_placeholder: bool = True
    name_heuristic: bool = False
    vectors_path: str = ""
    visual_dim: int = 32
    crop_h: int = 32
    crop_w: int = 64
    channels: int = 1
    conv_layers: List[List[int]] = field(default_factory=lambda: [[8, 3, 1], [16, 3, 2]])
    precomputed_visual: str = ""
    hidden: int = 64
    decoder: str = "crf"
    use_text: bool = True
    use_visual: bool = True
    use_spatial: bool = True
    seed: int = 42

    @property
    def fused_dim(self) -> int:
        return self.text_dim + self.visual_dim + SPATIAL_DIM

    def text_config(self) -> TextFeatureConfig:
        return TextFeatureConfig(
            dim=self.text_dim,
            pooling=self.pooling,
            weighting_constant=self.weighting_constant,
            lowercase=self.lowercase,
            number_placeholder=self.number_placeholder,
            name_heuristic=self.name_heuristic,
        )

    def visual_config(self) -> VisualEncoderConfig:
        return VisualEncoderConfig(
            crop_h=self.crop_h,
            crop_w=self.crop_w,
            channels=self.channels,
            out_dim=self.visual_dim,
            conv_layers=[tuple(spec) for spec in self.conv_layers],
        )

    def validate(self) -> None:
        if self.hidden <= 0 or self.vocab_size <= 0:
            raise ValueError("hidden and vocab_size must be positive")
        if self.decoder not in DECODERS:
            raise ValueError(f"decoder must be one of {DECODERS}, got {self.decoder!r}")
        self.text_config().validate()
        self.visual_config().validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "TaggerConfig":
        known = TaggerConfig.__dataclass_fields__
        return TaggerConfig(**{k: v for k, v in data.items() if k in known})


@dataclass
class InvoiceFeatures:
    invoice_id: str
    order: np.ndarray
    spatial: np.ndarray
    tokens: Optional[TokenIndex] = None
    text_fixed: Optional[np.ndarray] = None
    present: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    crops: Optional[np.ndarray] = None
    visual_fixed: Optional[np.ndarray] = None
    fixed_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    labels: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return int(self.order.shape[0])


def fuse(tf: np.ndarray, vf: np.ndarray, sf: np.ndarray, cfg: TaggerConfig) -> np.ndarray:
    if tf.shape[-1] != cfg.text_dim or vf.shape[-1] != cfg.visual_dim or sf.shape[-1] != SPATIAL_DIM:
        raise ShapeError(
            f"fuse expects {cfg.text_dim}+{cfg.visual_dim}+{SPATIAL_DIM}, "
            f"got {tf.shape[-1]}+{vf.shape[-1]}+{sf.shape[-1]}"
        )
    return np.concatenate([tf, vf, sf], axis=-1)


@dataclass
class _BatchCache:
    mask: np.ndarray
    lengths: List[int]
    visual_rows: List[Tuple[int, int]]
    visual_trace: object = None


class TaggerModel:
    """Fused per-box encoder, BiLSTM, emission projection and CRF."""

    def __init__(
        self,
        cfg: TaggerConfig,
        freq: Optional[Dict[str, float]] = None,
        provider: Optional[EmbeddingProvider] = None,
        precomputed: Optional[PrecomputedVisual] = None,
    ):
        if provider is None and cfg.vectors_path:
            provider = load_vector_file(Path(cfg.vectors_path), cfg.vocab_size, cfg.seed)
        if provider is not None and provider.dim != cfg.text_dim:
            logger.info("Text dim follows the vector file: %d -> %d", cfg.text_dim, provider.dim)
            cfg.text_dim = provider.dim
        cfg.validate()
        self.cfg = cfg
        self.freq: Dict[str, float] = dict(freq or {})
        self.text_cfg = cfg.text_config()
        rng = np.random.default_rng(cfg.seed)
        self.provider: EmbeddingProvider = provider or HashedProvider(cfg.text_dim, cfg.vocab_size, cfg.seed)
        self.visual = VisualEncoder(cfg.visual_config(), rng)
        self.fw = LstmParams.create("lstm.fw", cfg.fused_dim, cfg.hidden, rng)
        self.bw = LstmParams.create("lstm.bw", cfg.fused_dim, cfg.hidden, rng)
        self.proj = Dense.create("proj", 2 * cfg.hidden, NUM_LABELS, rng)
        self.crf = CrfParams.create(NUM_LABELS)
        if precomputed is None and cfg.precomputed_visual:
            precomputed = load_precomputed(Path(cfg.precomputed_visual))
        if precomputed is not None and precomputed.dim != cfg.visual_dim:
            raise ShapeError(f"precomputed visual dim {precomputed.dim} differs from visual_dim {cfg.visual_dim}")
        self.precomputed = precomputed

    @property
    def trainable_text(self) -> bool:
        return isinstance(self.provider, HashedProvider) and self.provider.trainable

    def parameters(self) -> List[Parameter]:
        params: List[Parameter] = []
        if self.trainable_text:
            params.append(self.provider.table)  # type: ignore[attr-defined]
        params += self.visual.parameters()
        params += self.fw.parameters() + self.bw.parameters()
        params += self.proj.parameters() + self.crf.parameters()
        return params

    # -- features ---------------------------------------------------------------------------

    def extract(
        self,
        invoice: Invoice,
        labels: Optional[Sequence[FieldLabel]] = None,
        order: Optional[Sequence[int]] = None,
        spatial: Optional[np.ndarray] = None,
    ) -> InvoiceFeatures:
        perm = np.asarray(order if order is not None else reading_order(invoice.boxes), dtype=np.int64)
        boxes = [invoice.boxes[i] for i in perm]
        if spatial is None:
            spatial = spatial_matrix(boxes, invoice.page_width, invoice.page_height)
        feats = InvoiceFeatures(invoice_id=invoice.id, order=perm, spatial=np.asarray(spatial, dtype=np.float64))
        if labels is not None:
            feats.labels = np.array([labels[i].id for i in perm], dtype=np.int64)

        if self.trainable_text:
            feats.tokens = index_boxes(boxes, self.provider, self.text_cfg, self.freq)  # type: ignore[arg-type]
        else:
            feats.text_fixed = np.stack([embed_box(box, self.provider, self.text_cfg, self.freq) for box in boxes])

        n = len(boxes)
        feats.fixed_mask = np.zeros(n, dtype=bool)
        feats.present = np.zeros(n, dtype=bool)
        if not self.cfg.use_visual:
            return feats
        if self.precomputed is not None:
            feats.visual_fixed = np.zeros((n, self.cfg.visual_dim))
            for pos, idx in enumerate(perm):
                vec = self.precomputed.lookup(invoice.id, int(idx))
                if vec is not None:
                    feats.visual_fixed[pos] = vec
                    feats.fixed_mask[pos] = True
        raster = page_raster(invoice) if not np.all(feats.fixed_mask) else None
        if raster is not None:
            vcfg = self.visual.cfg
            crops = []
            for pos, box in enumerate(boxes):
                if feats.fixed_mask[pos]:
                    continue
                crop = crop_and_resize(raster, box, vcfg, invoice.page_width, invoice.page_height)
                if crop.present:
                    feats.present[pos] = True
                    crops.append(crop.pixels)
            if crops:
                feats.crops = np.stack(crops)
        return feats

    def extract_labeled(self, item: LabeledInvoice) -> InvoiceFeatures:
        return self.extract(item.invoice, item.labels)

    # -- forward / backward -----------------------------------------------------------------

    def _fuse_batch(self, batch: Sequence[InvoiceFeatures], pad_to: Optional[int]) -> Tuple[np.ndarray, _BatchCache]:
        cfg = self.cfg
        lengths = [f.length for f in batch]
        t_max = max(max(lengths), pad_to or 0)
        x = np.zeros((len(batch), t_max, cfg.fused_dim))
        mask = np.zeros((len(batch), t_max), dtype=bool)
        td, vd = cfg.text_dim, cfg.visual_dim
        for b, f in enumerate(batch):
            n = f.length
            mask[b, :n] = True
            if cfg.use_text:
                if f.tokens is not None:
                    x[b, :n, :td] = pooled_lookup(f.tokens, self.provider.table, n)  # type: ignore[attr-defined]
                elif f.text_fixed is not None:
                    x[b, :n, :td] = f.text_fixed
            if cfg.use_spatial:
                x[b, :n, td + vd:] = f.spatial

        cache = _BatchCache(mask=mask, lengths=lengths, visual_rows=[])
        if cfg.use_visual:
            crops = []
            for b, f in enumerate(batch):
                if f.visual_fixed is not None:
                    x[b, :f.length, td:td + vd][f.fixed_mask] = f.visual_fixed[f.fixed_mask]
                if f.crops is not None:
                    crops.append(f.crops)
                    cache.visual_rows.extend((b, int(p)) for p in np.flatnonzero(f.present))
            if crops:
                out, cache.visual_trace = self.visual.forward(np.concatenate(crops))
                rows = np.array(cache.visual_rows)
                x[rows[:, 0], rows[:, 1], td:td + vd] = out
        return x, cache

    def _encode(self, x: np.ndarray, mask: np.ndarray):
        h, trace = bilstm_forward(x, mask, self.fw, self.bw)
        return h, trace, self.proj.forward(h)

    def forward_backward(
        self, batch: Sequence[InvoiceFeatures], pad_to: Optional[int] = None, backward: bool = True
    ) -> Tuple[float, List[float]]:
        """Mean per-invoice NLL over the batch; accumulates gradients when ``backward``."""
        x, cache = self._fuse_batch(batch, pad_to)
        h, trace, em = self._encode(x, cache.mask)
        scale = 1.0 / len(batch)
        d_em = np.zeros_like(em)
        losses: List[float] = []
        for b, f in enumerate(batch):
            if f.labels is None:
                raise ValueError(f"{f.invoice_id}: training needs gold labels")
            if self.cfg.decoder == "crf":
                loss, d_e = crf_nll(em[b], self.crf, f.labels, cache.mask[b], scale=scale if backward else 0.0)
            else:
                loss, d_e = softmax_nll(em[b], f.labels, cache.mask[b])
            losses.append(float(loss))
            d_em[b] = d_e * scale
        mean_loss = sum(losses) * scale
        if not backward:
            return mean_loss, losses

        d_h = self.proj.backward(h, d_em)
        d_x = bilstm_backward(trace, d_h, self.fw, self.bw)
        td, vd = self.cfg.text_dim, self.cfg.visual_dim
        if self.cfg.use_text and self.trainable_text:
            for b, f in enumerate(batch):
                if f.tokens is not None:
                    pooled_lookup_backward(f.tokens, self.provider.table, d_x[b, :f.length, :td])  # type: ignore[attr-defined]
        if self.cfg.use_visual and cache.visual_trace is not None:
            rows = np.array(cache.visual_rows)
            self.visual.backward(cache.visual_trace, d_x[rows[:, 0], rows[:, 1], td:td + vd])
        return mean_loss, losses

    # -- inference --------------------------------------------------------------------------

    def fused(self, feats: InvoiceFeatures) -> np.ndarray:
        x, _ = self._fuse_batch([feats], None)
        return x[0]

    def emissions(self, fused: np.ndarray) -> np.ndarray:
        if fused.ndim != 2 or fused.shape[1] != self.cfg.fused_dim:
            raise ShapeError(f"features of width {fused.shape[-1]} vs model fused_dim {self.cfg.fused_dim}")
        if fused.shape[0] < 1:
            raise ShapeError("emissions need at least one box")
        _, _, em = self._encode(fused[None], np.ones((1, fused.shape[0]), dtype=bool))
        return em[0]

    def decode(self, em: np.ndarray, mask: Optional[Sequence[bool]] = None) -> Tuple[List[int], np.ndarray]:
        """Label ids and per-step confidence of the chosen label."""
        if self.cfg.decoder == "crf":
            path, _ = viterbi(em, self.crf, mask)
            probs = marginals(em, self.crf, mask)
        else:
            path = softmax_decode(em, mask)
            probs = softmax(em[: len(path)])
        conf = probs[np.arange(len(path)), path]
        return path, conf

    def predict_features(self, feats: InvoiceFeatures) -> Tuple[List[int], np.ndarray]:
        """Decoded ids and confidences in the features' (reading) order."""
        return self.decode(self.emissions(self.fused(feats)))

    def predict(self, invoice: Invoice) -> List[Tuple[FieldLabel, float]]:
        feats = self.extract(invoice)
        path, conf = self.predict_features(feats)
        out: List[Tuple[FieldLabel, float]] = [(FieldLabel.NONE, 0.0)] * len(invoice.boxes)
        for pos, orig in enumerate(feats.order):
            out[int(orig)] = (FieldLabel.from_id(path[pos]), float(conf[pos]))
        return out

    # -- persistence ------------------------------------------------------------------------

    def snapshot(self) -> List[np.ndarray]:
        return [p.value.copy() for p in self.parameters()]

    def restore(self, values: List[np.ndarray]) -> None:
        for p, value in zip(self.parameters(), values):
            p.value[...] = value

    def checkpoint_payload(self) -> Tuple[dict, List[Tuple[str, np.ndarray]]]:
        meta = {"kind": "tagger", "tagger": self.cfg.to_dict(), "freq": self.freq, "labels": [label.value for label in FieldLabel]}
        tensors = [(p.name, p.value) for p in self.parameters()]
        if isinstance(self.provider, VectorFileProvider):
            meta["text_vocab"] = self.provider.words
            tensors.append(("text.vectors", self.provider.vectors))
        return meta, tensors

    @staticmethod
    def from_payload(meta: dict, tensors: Dict[str, np.ndarray]) -> "TaggerModel":
        cfg = TaggerConfig.from_dict(meta["tagger"])
        provider: Optional[EmbeddingProvider] = None
        if "text_vocab" in meta:
            provider = VectorFileProvider(meta["text_vocab"], tensors["text.vectors"], cfg.vocab_size, cfg.seed)
        if cfg.precomputed_visual and not Path(cfg.precomputed_visual).exists():
            logger.warning("Precomputed visual file %s is gone; encoder path used for every box", cfg.precomputed_visual)
            cfg.precomputed_visual = ""
        model = TaggerModel(cfg, meta.get("freq", {}), provider=provider)
        for p in model.parameters():
            if p.name not in tensors:
                raise ShapeError(f"checkpoint lacks tensor {p.name}")
            value = tensors[p.name]
            if value.shape != p.shape:
                raise ShapeError(f"checkpoint tensor {p.name} has shape {value.shape}, model expects {p.shape}")
            p.value[...] = value
        return model
