from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from app.config import RunConfig, echo_config, resolve_config
from evaluation.experiments import (
    METHODS,
    evaluate_predictor,
    fit_method,
    predict_corpus,
    predictor_from_payload,
    run_ablation,
    run_comparison,
)
from evaluation.report import write_report
from features.spatial import SPATIAL_COLUMNS
from features.text import token_frequencies
from models.corpus import split_dataset, validate_invoice
from models.errors import ConfigError, CorpusError, NumericError, ShapeError
from storage.checkpoint import load_checkpoint, save_checkpoint
from storage.corpus_io import load_corpus, load_invoices, write_corpus
from synth.generator import SynthConfig, generate, label_counts
from tagger.model import TaggerModel
from tagger.verify import GRAD_TOLERANCE, crf_oracle, model_grad_checks

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

CHECKPOINT_FILENAME = "model.boxtag"
HISTORY_FILENAME = "history.json"
PREDICTIONS_FILENAME = "predictions.json"
SUBCOMMANDS = ("validate", "synth", "train", "predict", "eval", "gradcheck", "oracle-test", "features")

_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str):  # type: ignore[override]
        raise ConfigError(f"{self.prog}: {message}")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON or YAML run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--text-dim", dest="text_dim", type=int)
    p.add_argument("--visual-dim", dest="visual_dim", type=int)
    p.add_argument("--pooling", choices=("mean", "weighted"))
    p.add_argument("--decoder", choices=("crf", "softmax"))
    p.add_argument("--vectors", dest="vectors_path", help="GloVe-style word vector file")
    p.add_argument("--precomputed-visual", dest="precomputed_visual", help="CSV of per-box visual vectors")
    p.add_argument("--visual-pretrain-epochs", dest="visual_pretrain_epochs", type=int)
    p.add_argument("--pad-global", dest="pad_global", action="store_true", default=None)
    p.add_argument("--workers", type=int)
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--format", dest="report_format", choices=("json", "table"))


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="boxtag", description="Bounding-box key information extraction for invoices")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true")
    verbosity.add_argument("--quiet", "-q", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_ArgumentParser)

    p = sub.add_parser("validate", help="check a corpus directory")
    p.add_argument("corpus", type=Path)

    p = sub.add_parser("synth", help="write a synthetic corpus")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--render", action="store_true", help="also write flat page rasters")
    p.add_argument("--render-scale", dest="render_scale", type=float, default=0.25)
    p.add_argument("--config", type=Path)

    p = sub.add_parser("train", help="train a method and write its checkpoint")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--method", choices=METHODS)
    _add_run_flags(p)

    p = sub.add_parser("predict", help="tag the invoices of a directory with a checkpoint")
    p.add_argument("checkpoint", type=Path)
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", help="score a checkpoint, or train and score methods on the split")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--split", choices=("test", "all"), default="all", help="invoices scored with --checkpoint")
    p.add_argument("--method", dest="eval_method", choices=METHODS + ("all",))
    p.add_argument("--ablation", action="store_true", help="full features vs text only")
    p.add_argument("--seeds", type=int, nargs="+")
    _add_run_flags(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full tagger loss")
    p.add_argument("--seeds", type=int, default=5)

    p = sub.add_parser("oracle-test", help="CRF enumeration oracle plus gradient checks")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grad-seeds", dest="grad_seeds", type=int, default=5)

    p = sub.add_parser("features", help="dump per-box fused features as CSV")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path)
    _add_run_flags(p)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {k: v for k, v in vars(args).items() if k in _CONFIG_KEYS and v is not None}


def _config(args: argparse.Namespace) -> RunConfig:
    return resolve_config(getattr(args, "config", None), _overrides(args))


def _write_json(path: Path, data: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


# -- subcommands ----------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    items = load_corpus(args.corpus)
    problems: List[str] = []
    warnings: List[str] = []
    for item in items:
        problems.extend(validate_invoice(item.invoice))
        if item.coverage is not None:
            warnings.extend(item.coverage.warnings(item.id))
    total, counts = label_counts(items)
    print(f"{len(items)} invoices, {total} boxes, labels {json.dumps(counts, sort_keys=True)}")
    for message in warnings:
        print(f"warning: {message}")
    for message in problems:
        print(f"error: {message}", file=sys.stderr)
    return EXIT_DATA if problems else EXIT_OK


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _config(args)
    seed = args.seed if args.seed is not None else cfg.seed
    synth_cfg = SynthConfig(n_invoices=args.n, seed=seed, render=args.render, render_scale=args.render_scale)
    try:
        items = generate(synth_cfg)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    write_corpus(args.out, items)
    echo_config(cfg, args.out)
    _write_json(args.out / "synth.json", synth_cfg.to_dict())
    print(f"wrote {len(items)} invoices to {args.out}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    train_set, val_set = split_dataset(corpus, cfg.split_ratio, cfg.seed)
    logger.info("Training %s on %d invoices, validating on %d", cfg.method, len(train_set), len(val_set))
    predictor, history = fit_method(cfg.method, train_set, val_set, cfg.tagger_config(), cfg.train_config())
    meta, tensors = predictor.checkpoint_payload()
    meta["run"] = cfg.to_dict()
    path = save_checkpoint(args.out / CHECKPOINT_FILENAME, meta, tensors)
    _write_json(args.out / HISTORY_FILENAME, [record.to_dict() for record in history])
    echo_config(cfg, args.out)
    report = evaluate_predictor(predictor, val_set, cfg.method)
    write_report(args.out / f"validation.{cfg.report_format}", report, cfg.report_format)
    print(f"checkpoint {path}; validation box macro-F1 {report.boxes.macro_f1:.4f}")
    return EXIT_OK


def _method_name(meta: dict) -> str:
    kind = meta.get("kind", "tagger")
    return "boxtagger" if kind == "tagger" else kind


def _load_predictor(path: Path):
    meta, tensors = load_checkpoint(path)
    return meta, predictor_from_payload(meta, tensors)


def cmd_predict(args: argparse.Namespace) -> int:
    meta, predictor = _load_predictor(args.checkpoint)
    invoices = load_invoices(args.corpus)
    out: Dict[str, Any] = {}
    for invoice, (labels, conf, pred) in zip(invoices, predict_corpus(predictor, invoices)):
        out[invoice.id] = {
            "fields": pred.to_dict(),
            "boxes": [
                {"index": i, "text": box.text, "label": label.value, "confidence": c}
                for i, (box, label, c) in enumerate(zip(invoice.boxes, labels, conf))
            ],
        }
    _write_json(args.out / PREDICTIONS_FILENAME, out)
    if "run" in meta:
        echo_config(RunConfig.from_dict(meta["run"], str(args.checkpoint)), args.out)
    print(f"tagged {len(invoices)} invoices into {args.out / PREDICTIONS_FILENAME}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.seeds:
        cfg.seeds = list(args.seeds)
    corpus = load_corpus(args.corpus)
    echo_config(cfg, args.out)
    report_path = args.out / f"report.{cfg.report_format}"

    if args.checkpoint is not None:
        meta, predictor = _load_predictor(args.checkpoint)
        items = corpus
        if args.split == "test":
            _, items = split_dataset(corpus, cfg.split_ratio, cfg.seed)
        report = evaluate_predictor(predictor, items, _method_name(meta))
        write_report(report_path, report, cfg.report_format)
        print(f"box macro-F1 {report.boxes.macro_f1:.4f}, field F1 {report.fields.micro.f1:.4f}")
        return EXIT_OK

    if args.ablation:
        result = run_ablation(corpus, cfg.seeds, cfg.tagger_config(), cfg.train_config(), ratio=cfg.split_ratio)
    else:
        method = args.eval_method or cfg.method
        methods = list(METHODS) if method == "all" else [method]
        result = run_comparison(corpus, methods, cfg.seeds, cfg.tagger_config(), cfg.train_config(), cfg.split_ratio)
    write_report(report_path, result.median_reports(), cfg.report_format)
    _write_json(args.out / "summary.json", {"median_box_macro_f1": result.summary(), "seeds": cfg.seeds})
    for method, score in result.summary().items():
        print(f"{method}: median box macro-F1 {score:.4f}")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    results = model_grad_checks(range(args.seeds))
    worst = max(err for _, err in results)
    for seed, err in results:
        print(f"seed {seed}: max relative error {err:.3e}")
    print(f"max gradient error {worst:.3e} (tolerance {GRAD_TOLERANCE:g})")
    if worst >= GRAD_TOLERANCE:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {GRAD_TOLERANCE:g}")
    return EXIT_OK


def cmd_oracle_test(args: argparse.Namespace) -> int:
    report = crf_oracle(instances=args.instances, seed=args.seed)
    print(f"max logZ error {report.max_logz_error:.3e}")
    print(f"max marginal error {report.max_marginal_error:.3e}")
    print(f"viterbi path mismatches {report.path_mismatches}, score mismatches {report.score_mismatches}")
    print(f"{report.instances} instances in {report.seconds:.2f}s")
    if not report.passed:
        raise NumericError(f"CRF oracle failed: {report.to_dict()}")
    if args.grad_seeds > 0:
        args.seeds = args.grad_seeds
        return cmd_gradcheck(args)
    return EXIT_OK


def cmd_features(args: argparse.Namespace) -> int:
    cfg = _config(args)
    invoices = load_invoices(args.corpus)
    if args.checkpoint is not None:
        meta, tensors = load_checkpoint(args.checkpoint)
        if meta.get("kind", "tagger") != "tagger":
            raise ConfigError(f"{args.checkpoint}: features need a box tagger checkpoint, got {meta.get('kind')!r}")
        model = TaggerModel.from_payload(meta, tensors)
    else:
        tagger_cfg = cfg.tagger_config()
        freq = token_frequencies((b.text for inv in invoices for b in inv.boxes), tagger_cfg.text_config())
        model = TaggerModel(tagger_cfg, freq if tagger_cfg.pooling == "weighted" else None)
    td, vd = model.cfg.text_dim, model.cfg.visual_dim
    header = ["invoice_id", "box_index"] + [f"t{i}" for i in range(td)] + [f"v{i}" for i in range(vd)] + list(SPATIAL_COLUMNS)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with open(args.out, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        for invoice in invoices:
            feats = model.extract(invoice)
            fused = model.fused(feats)
            by_box = np.empty_like(fused)
            by_box[feats.order] = fused
            for idx, vec in enumerate(by_box):
                writer.writerow([invoice.id, idx] + [repr(float(v)) for v in vec])
                rows += 1
    print(f"wrote {rows} rows to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "oracle-test": cmd_oracle_test,
    "features": cmd_features,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise ConfigError(f"a subcommand is required: {', '.join(SUBCOMMANDS)}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    root = logging.getLogger()
    if args.verbose:
        root.setLevel(logging.DEBUG)
    elif args.quiet:
        root.setLevel(logging.WARNING)

    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        code, message = EXIT_USAGE, str(exc)
    except (CorpusError, ShapeError, FileNotFoundError) as exc:
        code, message = EXIT_DATA, str(exc)
    except NumericError as exc:
        code, message = EXIT_NUMERIC, str(exc)
    except ValueError as exc:
        code, message = EXIT_USAGE, str(exc)
    logger.debug("%s failed", args.command, exc_info=True)
    print(f"error: {message}", file=sys.stderr)
    return code
