"""Word-level BiLSTM baseline: every word is tagged, boxes take the majority label of their words."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from features.spatial import spatial_matrix
from models.corpus import reading_order
from models.invoice import NUM_LABELS, BoundingBox, FieldLabel, Invoice, LabeledInvoice
from tagger.model import InvoiceFeatures, TaggerConfig, TaggerModel
from tagger.training import EpochRecord, TrainConfig, train

logger = logging.getLogger(__name__)


@dataclass
class WordSequence:
    invoice: Invoice
    # box index (original order) of every word
    parent: List[int]
    spatial: np.ndarray


def split_words(invoice: Invoice) -> WordSequence:
    """Boxes in reading order, each expanded into one pseudo-box per whitespace token."""
    box_spatial = spatial_matrix(invoice.boxes, invoice.page_width, invoice.page_height)
    words: List[BoundingBox] = []
    parent: List[int] = []
    for idx in reading_order(invoice.boxes):
        box = invoice.boxes[idx]
        for token in box.text.split():
            words.append(BoundingBox(corners=box.corners, text=token))
            parent.append(idx)
    word_invoice = Invoice(
        id=invoice.id, page_width=invoice.page_width, page_height=invoice.page_height, boxes=words
    )
    return WordSequence(word_invoice, parent, box_spatial[parent])


def majority_vote(word_ids: Sequence[int]) -> int:
    # argmax returns the first maximum, so ties go to the lower label id
    return int(np.argmax(np.bincount(np.asarray(word_ids, dtype=np.int64), minlength=NUM_LABELS)))


def word_config(cfg: TaggerConfig) -> TaggerConfig:
    out = copy.deepcopy(cfg)
    out.use_visual = False
    out.decoder = "softmax"
    return out


class WordTagger:
    def __init__(self, model: TaggerModel):
        self.model = model

    def extract(
        self, invoice: Invoice, labels: Optional[Sequence[FieldLabel]] = None
    ) -> Tuple[InvoiceFeatures, WordSequence]:
        seq = split_words(invoice)
        word_labels = [labels[p] for p in seq.parent] if labels is not None else None
        feats = self.model.extract(seq.invoice, word_labels, order=range(len(seq.parent)), spatial=seq.spatial)
        return feats, seq

    def extract_labeled(self, item: LabeledInvoice) -> InvoiceFeatures:
        return self.extract(item.invoice, item.labels)[0]

    def predict(self, invoice: Invoice) -> List[Tuple[FieldLabel, float]]:
        feats, seq = self.extract(invoice)
        ids, conf = self.model.predict_features(feats)
        votes: Dict[int, List[int]] = {}
        for pos, box_idx in enumerate(seq.parent):
            votes.setdefault(box_idx, []).append(pos)
        out: List[Tuple[FieldLabel, float]] = [(FieldLabel.NONE, 0.0)] * len(invoice.boxes)
        for box_idx, positions in votes.items():
            winner = majority_vote([ids[p] for p in positions])
            agreeing = [float(conf[p]) for p in positions if ids[p] == winner]
            out[box_idx] = (FieldLabel.from_id(winner), sum(agreeing) / len(positions))
        return out

    def checkpoint_payload(self) -> Tuple[dict, List[Tuple[str, np.ndarray]]]:
        meta, tensors = self.model.checkpoint_payload()
        meta["kind"] = "wordlstm"
        return meta, tensors

    @staticmethod
    def from_payload(meta: dict, tensors: Dict[str, np.ndarray]) -> "WordTagger":
        return WordTagger(TaggerModel.from_payload(meta, tensors))


def train_word_tagger(
    train_set: Sequence[LabeledInvoice],
    val_set: Sequence[LabeledInvoice],
    model_cfg: TaggerConfig,
    train_cfg: TrainConfig,
) -> Tuple[WordTagger, List[EpochRecord]]:
    model, history = train(
        train_set,
        val_set,
        word_config(model_cfg),
        train_cfg,
        extractor=lambda m, item: WordTagger(m).extract_labeled(item),
    )
    return WordTagger(model), history
