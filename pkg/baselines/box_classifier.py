"""Sequence-free baseline: one affine layer + softmax per box over frozen fused features."""

from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from models.errors import ShapeError
from models.invoice import NUM_LABELS, FieldLabel, Invoice
from neural.core import Dense, Parameter, logsumexp
from neural.optim import Adam
from tagger.model import InvoiceFeatures, TaggerModel
from tagger.crf import softmax

logger = logging.getLogger(__name__)


class BoxClassifier:
    def __init__(self, encoder: TaggerModel, seed: int = 0):
        self.encoder = encoder
        self.head = Dense.create("boxclf", encoder.cfg.fused_dim, NUM_LABELS, np.random.default_rng(seed))

    def parameters(self) -> List[Parameter]:
        return self.head.parameters()

    def features(self, feats: InvoiceFeatures) -> np.ndarray:
        return self.encoder.fused(feats)

    def scores(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.head.W.shape[0]:
            raise ShapeError(f"box classifier expects (n, {self.head.W.shape[0]}) features, got {x.shape}")
        return self.head.forward(x)

    def predict_matrix(self, x: np.ndarray) -> Tuple[List[int], np.ndarray]:
        logits = self.scores(x)
        # argmax keeps the first maximum, i.e. the lower label id
        ids = np.argmax(logits, axis=1)
        probs = softmax(logits)
        return [int(k) for k in ids], probs[np.arange(len(ids)), ids]

    def fit(
        self,
        x: np.ndarray,
        y: np.ndarray,
        epochs: int = 100,
        lr: float = 1e-2,
        batch_size: int = 64,
        seed: int = 0,
    ) -> List[float]:
        """Mean cross-entropy per box with Adam; returns the per-epoch loss."""
        y = np.asarray(y, dtype=np.int64)
        if x.shape[0] != y.shape[0]:
            raise ShapeError(f"{x.shape[0]} feature rows for {y.shape[0]} labels")
        optim = Adam(self.parameters(), lr=lr)
        rng = np.random.default_rng(seed)
        history: List[float] = []
        n = x.shape[0]
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                logits = self.scores(x[idx])
                log_z = logsumexp(logits, axis=1)
                total += float(np.sum(log_z - logits[np.arange(len(idx)), y[idx]]))
                d_logits = np.exp(logits - log_z[:, None])
                d_logits[np.arange(len(idx)), y[idx]] -= 1.0
                self.head.backward(x[idx], d_logits / len(idx))
                optim.step()
            history.append(total / max(n, 1))
        return history

    def predict(self, invoice: Invoice) -> List[Tuple[FieldLabel, float]]:
        feats = self.encoder.extract(invoice)
        ids, conf = self.predict_matrix(self.features(feats))
        out: List[Tuple[FieldLabel, float]] = [(FieldLabel.NONE, 0.0)] * len(invoice.boxes)
        for pos, orig in enumerate(feats.order):
            out[int(orig)] = (FieldLabel.from_id(ids[pos]), float(conf[pos]))
        return out

    def checkpoint_payload(self) -> Tuple[dict, List[Tuple[str, np.ndarray]]]:
        meta, tensors = self.encoder.checkpoint_payload()
        meta["kind"] = "boxclf"
        return meta, tensors + [(p.name, p.value) for p in self.parameters()]

    @staticmethod
    def from_payload(meta: dict, tensors: Dict[str, np.ndarray]) -> "BoxClassifier":
        model = BoxClassifier(TaggerModel.from_payload(meta, tensors))
        for p in model.parameters():
            p.value[...] = tensors[p.name]
        return model


def stack_features(model: BoxClassifier, feats: Sequence[InvoiceFeatures]) -> Tuple[np.ndarray, np.ndarray]:
    x = np.concatenate([model.features(f) for f in feats])
    y = np.concatenate([f.labels for f in feats])  # type: ignore[misc]
    return x, y


def train_box_classifier(
    train_feats: Sequence[InvoiceFeatures],
    encoder: TaggerModel,
    epochs: int = 100,
    lr: float = 1e-2,
    seed: int = 0,
    model: Optional[BoxClassifier] = None,
) -> Tuple[BoxClassifier, List[float]]:
    model = model or BoxClassifier(encoder, seed)
    x, y = stack_features(model, train_feats)
    history = model.fit(x, y, epochs=epochs, lr=lr, seed=seed)
    logger.info("Box classifier trained on %d boxes, final loss %.4f", x.shape[0], history[-1] if history else float("nan"))
    return model, history
