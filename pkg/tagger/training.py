from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from evaluation.metrics import evaluate_boxes
from features.text import token_frequencies
from features.visual import pretrain_encoder
from models.errors import NumericError
from models.invoice import LabeledInvoice
from neural.optim import Adam
from tagger.model import InvoiceFeatures, TaggerConfig, TaggerModel

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    patience: int = 10
    seed: int = 42
    clip_norm: float = 5.0
    pad_global: bool = False
    visual_pretrain_epochs: int = 0
    workers: int = 1

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr = 0 is allowed: it turns training into a fixed-parameter evaluation run
        if self.lr < 0 or not math.isfinite(self.lr):
            raise ValueError(f"lr must be a finite value >= 0, got {self.lr}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_macro_f1: float

    def to_dict(self) -> dict:
        return asdict(self)


def extract_all(
    fn: Callable[[LabeledInvoice], InvoiceFeatures], items: Sequence[LabeledInvoice], workers: int = 1
) -> List[InvoiceFeatures]:
    if workers <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def box_macro_f1(model: TaggerModel, feats: Sequence[InvoiceFeatures]) -> float:
    pred: List[int] = []
    gold: List[int] = []
    for f in feats:
        path, _ = model.predict_features(f)
        pred.extend(path)
        gold.extend(int(v) for v in f.labels)  # type: ignore[union-attr]
    return evaluate_boxes(pred, gold).macro_f1


def train(
    train_set: Sequence[LabeledInvoice],
    val_set: Sequence[LabeledInvoice],
    model_cfg: TaggerConfig,
    train_cfg: TrainConfig,
    model: Optional[TaggerModel] = None,
    extractor: Optional[Callable[[TaggerModel, LabeledInvoice], InvoiceFeatures]] = None,
) -> Tuple[TaggerModel, List[EpochRecord]]:
    """Mini-batch Adam on mean per-invoice NLL; returns the best-validation model."""
    if not train_set or not val_set:
        raise ValueError("training needs non-empty train and validation splits")
    train_cfg.validate()
    if model is None:
        freq: Dict[str, float] = {}
        if model_cfg.pooling == "weighted":
            freq = token_frequencies((box.text for item in train_set for box in item.invoice.boxes), model_cfg.text_config())
        model = TaggerModel(model_cfg, freq)

    if extractor is None:
        fn = model.extract_labeled
    else:
        fn = lambda item: extractor(model, item)  # noqa: E731
    train_feats = extract_all(fn, train_set, train_cfg.workers)
    val_feats = extract_all(fn, val_set, train_cfg.workers)
    pad_to = max(f.length for f in train_feats) if train_cfg.pad_global else None

    if train_cfg.visual_pretrain_epochs > 0 and model.cfg.use_visual:
        _pretrain_visual(model, train_feats, train_cfg)

    optim = Adam(model.parameters(), lr=train_cfg.lr, clip_norm=train_cfg.clip_norm or None)
    rng = np.random.default_rng(train_cfg.seed)
    history: List[EpochRecord] = []
    best_f1 = -1.0
    best_values = model.snapshot()
    stale = 0
    n = len(train_feats)
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        per_invoice: List[float] = []
        for batch_no, start in enumerate(range(0, n, train_cfg.batch_size), start=1):
            batch = [train_feats[i] for i in order[start:start + train_cfg.batch_size]]
            optim.zero_grad()
            loss, losses = model.forward_backward(batch, pad_to=pad_to)
            if not math.isfinite(loss):
                raise NumericError(f"Non-finite loss {loss} at epoch {epoch}, batch {batch_no}")
            optim.step()
            per_invoice.extend(losses)
        train_loss = math.fsum(per_invoice) / n
        val_f1 = box_macro_f1(model, val_feats)
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss, val_macro_f1=val_f1))
        if val_f1 > best_f1:
            best_f1 = val_f1
            best_values = model.snapshot()
            stale = 0
        else:
            stale += 1
        logger.info("epoch %d loss %.4f val macro-F1 %.4f (best %.4f)", epoch, train_loss, val_f1, best_f1)
        if stale >= train_cfg.patience:
            logger.info("Early stop after %d epochs without improvement", stale)
            break
    model.restore(best_values)
    return model, history


def _pretrain_visual(model: TaggerModel, feats: Sequence[InvoiceFeatures], train_cfg: TrainConfig) -> None:
    crops = [f.crops for f in feats if f.crops is not None]
    if not crops:
        logger.info("No page images available; visual pretraining skipped")
        return
    labels = np.concatenate([f.labels[f.present] for f in feats if f.crops is not None])  # type: ignore[index]
    history = pretrain_encoder(
        np.concatenate(crops),
        labels,
        model.visual,
        epochs=train_cfg.visual_pretrain_epochs,
        lr=max(train_cfg.lr, 1e-4),
        seed=train_cfg.seed,
    )
    logger.info("Visual encoder pretrained for %d epochs, final loss %.4f", len(history), history[-1])
