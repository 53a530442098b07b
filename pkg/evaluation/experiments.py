"""Method comparison and feature ablation over seeded splits."""

from __future__ import annotations

import copy
import logging
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from baselines.box_classifier import BoxClassifier, train_box_classifier
from baselines.rules import RuleConfig, RuleTagger
from baselines.word_tagger import WordTagger, train_word_tagger
from evaluation.metrics import EvalReport, evaluate_boxes, evaluate_fields
from evaluation.postprocess import aggregate_fields
from models.corpus import split_dataset
from models.invoice import FieldLabel, FieldPrediction, Invoice, LabeledInvoice
from tagger.model import TaggerConfig, TaggerModel
from tagger.training import EpochRecord, TrainConfig, extract_all, train

logger = logging.getLogger(__name__)

METHODS = ("rule", "boxclf", "wordlstm", "boxtagger")


class Predictor(Protocol):
    def predict(self, invoice: Invoice) -> List[Tuple[FieldLabel, float]]: ...

    def checkpoint_payload(self) -> Tuple[dict, List[Tuple[str, np.ndarray]]]: ...


_LOADERS: Dict[str, Callable[[dict, Dict[str, np.ndarray]], Predictor]] = {
    "tagger": TaggerModel.from_payload,
    "boxclf": BoxClassifier.from_payload,
    "wordlstm": WordTagger.from_payload,
    "rule": RuleTagger.from_payload,
}


def predictor_from_payload(meta: dict, tensors: Dict[str, np.ndarray]) -> Predictor:
    kind = meta.get("kind", "tagger")
    loader = _LOADERS.get(kind)
    if loader is None:
        raise ValueError(f"unknown checkpoint kind {kind!r}")
    return loader(meta, tensors)


def fit_method(
    method: str,
    train_set: Sequence[LabeledInvoice],
    val_set: Sequence[LabeledInvoice],
    model_cfg: TaggerConfig,
    train_cfg: TrainConfig,
    tagger: Optional[TaggerModel] = None,
) -> Tuple[Predictor, List[EpochRecord]]:
    """Train one method; ``tagger`` lets the box classifier reuse an already trained encoder."""
    if method == "rule":
        return RuleTagger(RuleConfig()), []
    if method == "boxtagger":
        return train(train_set, val_set, copy.deepcopy(model_cfg), train_cfg)
    if method == "wordlstm":
        return train_word_tagger(train_set, val_set, model_cfg, train_cfg)
    if method == "boxclf":
        history: List[EpochRecord] = []
        if tagger is None:
            tagger, history = train(train_set, val_set, copy.deepcopy(model_cfg), train_cfg)
        feats = extract_all(tagger.extract_labeled, train_set, train_cfg.workers)
        clf, _ = train_box_classifier(feats, tagger, epochs=train_cfg.epochs, seed=train_cfg.seed)
        return clf, history
    raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")


def predict_corpus(
    predictor: Predictor, invoices: Sequence[Invoice]
) -> List[Tuple[List[FieldLabel], List[float], FieldPrediction]]:
    out = []
    for invoice in invoices:
        pairs = predictor.predict(invoice)
        labels = [label for label, _ in pairs]
        conf = [c for _, c in pairs]
        out.append((labels, conf, aggregate_fields(invoice, labels, conf)))
    return out


def evaluate_predictor(predictor: Predictor, test_set: Sequence[LabeledInvoice], method: str) -> EvalReport:
    results = predict_corpus(predictor, [item.invoice for item in test_set])
    pred_ids: List[int] = []
    gold_ids: List[int] = []
    preds: Dict[str, FieldPrediction] = {}
    for item, (labels, _, fields) in zip(test_set, results):
        pred_ids.extend(label.id for label in labels)
        gold_ids.extend(item.label_ids())
        preds[item.id] = fields
    golds = {item.id: item.annotation for item in test_set}
    return EvalReport(method=method, fields=evaluate_fields(preds, golds), boxes=evaluate_boxes(pred_ids, gold_ids))


@dataclass
class MethodRun:
    method: str
    seed: int
    report: EvalReport


@dataclass
class ComparisonResult:
    runs: List[MethodRun] = field(default_factory=list)

    def methods(self) -> List[str]:
        seen: List[str] = []
        for run in self.runs:
            if run.method not in seen:
                seen.append(run.method)
        return seen

    def median_macro_f1(self, method: str) -> float:
        return statistics.median(r.report.boxes.macro_f1 for r in self.runs if r.method == method)

    def summary(self) -> Dict[str, float]:
        return {m: self.median_macro_f1(m) for m in self.methods()}

    def median_reports(self) -> List[EvalReport]:
        """Per method, the run at the (lower) median box macro-F1."""
        out = []
        for m in self.methods():
            runs = sorted((r for r in self.runs if r.method == m), key=lambda r: (r.report.boxes.macro_f1, r.seed))
            out.append(runs[(len(runs) - 1) // 2].report)
        return out


def _seeded(model_cfg: TaggerConfig, train_cfg: TrainConfig, seed: int) -> Tuple[TaggerConfig, TrainConfig]:
    mc = copy.deepcopy(model_cfg)
    tc = copy.deepcopy(train_cfg)
    mc.seed = seed
    tc.seed = seed
    return mc, tc


def holdout_split(
    corpus: Sequence[LabeledInvoice], ratio: float, seed: int
) -> Tuple[List[LabeledInvoice], List[LabeledInvoice], List[LabeledInvoice]]:
    """Fit, validation and test parts; the validation part is carved out of the training part."""
    train_set, test_set = split_dataset(corpus, ratio, seed)
    fit_set, val_set = split_dataset(train_set, ratio, seed)
    return fit_set, val_set, test_set


def run_comparison(
    corpus: Sequence[LabeledInvoice],
    methods: Sequence[str] = METHODS,
    seeds: Sequence[int] = (0, 1, 2),
    model_cfg: Optional[TaggerConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    ratio: float = 0.8,
) -> ComparisonResult:
    model_cfg = model_cfg or TaggerConfig()
    train_cfg = train_cfg or TrainConfig()
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown methods {unknown}, expected a subset of {METHODS}")
    result = ComparisonResult()
    for seed in seeds:
        fit_set, val_set, test_set = holdout_split(corpus, ratio, seed)
        mc, tc = _seeded(model_cfg, train_cfg, seed)
        tagger: Optional[TaggerModel] = None
        # the box classifier reuses the box tagger's encoder of the same seed
        ordered = sorted(methods, key=lambda m: m != "boxtagger")
        for method in ordered:
            predictor, _ = fit_method(method, fit_set, val_set, mc, tc, tagger=tagger)
            if method == "boxtagger":
                tagger = predictor  # type: ignore[assignment]
            report = evaluate_predictor(predictor, test_set, method)
            logger.info("seed %d %s: box macro-F1 %.4f, field F1 %.4f", seed, method, report.boxes.macro_f1, report.fields.micro.f1)
            result.runs.append(MethodRun(method, seed, report))
    result.runs.sort(key=lambda r: (list(methods).index(r.method), r.seed))
    return result


ABLATIONS: Dict[str, Dict[str, bool]] = {
    "full": {"use_text": True, "use_visual": True, "use_spatial": True},
    "text+spatial": {"use_text": True, "use_visual": False, "use_spatial": True},
    "text": {"use_text": True, "use_visual": False, "use_spatial": False},
}


def run_ablation(
    corpus: Sequence[LabeledInvoice],
    seeds: Sequence[int] = (0, 1, 2),
    model_cfg: Optional[TaggerConfig] = None,
    train_cfg: Optional[TrainConfig] = None,
    variants: Sequence[str] = ("full", "text"),
    ratio: float = 0.8,
) -> ComparisonResult:
    model_cfg = model_cfg or TaggerConfig()
    train_cfg = train_cfg or TrainConfig()
    result = ComparisonResult()
    for seed in seeds:
        fit_set, val_set, test_set = holdout_split(corpus, ratio, seed)
        for name in variants:
            mc, tc = _seeded(model_cfg, train_cfg, seed)
            for key, value in ABLATIONS[name].items():
                setattr(mc, key, value)
            model, _ = train(fit_set, val_set, mc, tc)
            method = f"boxtagger[{name}]"
            report = evaluate_predictor(model, test_set, method)
            logger.info("seed %d %s: box macro-F1 %.4f", seed, method, report.boxes.macro_f1)
            result.runs.append(MethodRun(method, seed, report))
    result.runs.sort(key=lambda r: (list(variants).index(r.method[len("boxtagger["):-1]), r.seed))
    return result
