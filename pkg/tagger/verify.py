"""Self-checks run by ``oracle-test``: exhaustive CRF enumeration and full-model gradient checks."""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import asdict, dataclass
from typing import Iterable, List, Tuple

import numpy as np

from models.invoice import BoundingBox, FieldLabel, Invoice
from neural.core import logsumexp
from neural.gradcheck import grad_check
from tagger.crf import CrfParams, crf_log_partition, marginals, viterbi
from tagger.model import TaggerConfig, TaggerModel

logger = logging.getLogger(__name__)

LOGZ_TOLERANCE = 1e-8
MARGINAL_TOLERANCE = 1e-9
GRAD_TOLERANCE = 1e-4


@dataclass
class OracleReport:
    instances: int
    max_logz_error: float
    max_marginal_error: float
    max_marginal_sum_error: float
    path_mismatches: int
    score_mismatches: int
    seconds: float

    @property
    def passed(self) -> bool:
        return (
            self.max_logz_error < LOGZ_TOLERANCE
            and self.max_marginal_error < MARGINAL_TOLERANCE
            and self.max_marginal_sum_error < MARGINAL_TOLERANCE
            and self.path_mismatches == 0
            and self.score_mismatches == 0
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["passed"] = self.passed
        return data


def random_crf(rng: np.random.Generator, num_labels: int, scale: float = 1.0) -> CrfParams:
    crf = CrfParams.create(num_labels)
    crf.transitions.value[...] = rng.normal(0.0, scale, crf.transitions.shape)
    crf.start.value[...] = rng.normal(0.0, scale, crf.start.shape)
    crf.end.value[...] = rng.normal(0.0, scale, crf.end.shape)
    return crf


def enumerate_scores(emissions: np.ndarray, crf: CrfParams) -> Tuple[np.ndarray, np.ndarray]:
    """Every label sequence (lexicographic) and its score, summed in the same order as ``sequence_score``."""
    n, L = emissions.shape
    seqs = np.array(list(itertools.product(range(L), repeat=n)), dtype=np.int64)
    trans = crf.transitions.value
    score = crf.start.value[seqs[:, 0]] + emissions[0, seqs[:, 0]]
    for t in range(1, n):
        score = score + trans[seqs[:, t - 1], seqs[:, t]]
        score = score + emissions[t, seqs[:, t]]
    return seqs, score + crf.end.value[seqs[:, -1]]


def crf_oracle(instances: int = 100, max_steps: int = 6, num_labels: int = 5, seed: int = 0) -> OracleReport:
    """Compare forward, Viterbi and marginals against brute force over all L^T sequences."""
    started = time.perf_counter()
    rng = np.random.default_rng(seed)
    worst_logz = worst_marg = worst_sum = 0.0
    path_bad = score_bad = 0
    for k in range(instances):
        n = 1 + k % max_steps
        crf = random_crf(rng, num_labels)
        em = rng.normal(0.0, 2.0, (n, num_labels))
        seqs, scores = enumerate_scores(em, crf)

        log_z = float(logsumexp(scores))
        worst_logz = max(worst_logz, abs(crf_log_partition(em, crf) - log_z))

        best = int(np.argmax(scores))
        path, score = viterbi(em, crf)
        if path != seqs[best].tolist():
            path_bad += 1
        if score != float(scores[best]):
            score_bad += 1

        probs = np.exp(scores - log_z)
        expected = np.zeros((n, num_labels))
        for t in range(n):
            expected[t] = np.bincount(seqs[:, t], weights=probs, minlength=num_labels)
        got = marginals(em, crf)
        worst_marg = max(worst_marg, float(np.max(np.abs(got - expected))))
        worst_sum = max(worst_sum, float(np.max(np.abs(got.sum(axis=1) - 1.0))))

    report = OracleReport(
        instances=instances,
        max_logz_error=worst_logz,
        max_marginal_error=worst_marg,
        max_marginal_sum_error=worst_sum,
        path_mismatches=path_bad,
        score_mismatches=score_bad,
        seconds=time.perf_counter() - started,
    )
    logger.info("CRF oracle over %d instances: %s", instances, report.to_dict())
    return report


# -- full-model gradient check --------------------------------------------------------------


def toy_config(seed: int) -> TaggerConfig:
    return TaggerConfig(
        text_dim=8,
        vocab_size=32,
        visual_dim=4,
        crop_h=4,
        crop_w=4,
        conv_layers=[[2, 3, 1], [2, 3, 2]],
        hidden=4,
        seed=seed,
    )


def toy_invoice(rng: np.random.Generator) -> Tuple[Invoice, List[FieldLabel]]:
    """Three boxes on a small random page, one per row."""
    width, height = 30.0, 24.0
    boxes = [
        BoundingBox.from_coords([2, 1, 20, 1, 20, 6, 2, 6], "ACME SDN BHD"),
        BoundingBox.from_coords([3, 9, 18, 9, 18, 14, 3, 14], "26/02/1998"),
        BoundingBox.from_coords([12, 17, 28, 17, 28, 22, 12, 22], "TOTAL 7.50"),
    ]
    image = rng.uniform(0.0, 1.0, (int(height), int(width), 3))
    invoice = Invoice(id="toy", page_width=width, page_height=height, boxes=boxes, image=image)
    return invoice, [FieldLabel.COMPANY, FieldLabel.DATE, FieldLabel.TOTAL]


def model_grad_check(seed: int, h: float = 1e-5, decoder: str = "crf") -> float:
    """Max relative backprop error of the full tagger loss (text table, conv stack, BiLSTM, CRF)."""
    cfg = toy_config(seed)
    cfg.decoder = decoder
    model = TaggerModel(cfg)
    rng = np.random.default_rng(seed)
    for p in model.parameters():
        p.value[...] = rng.normal(0.0, 0.5, p.shape)
    invoice, labels = toy_invoice(rng)
    feats = model.extract(invoice, labels)
    return grad_check(lambda: model.forward_backward([feats])[0], model.parameters(), h=h)


def model_grad_checks(seeds: Iterable[int] = range(5)) -> List[Tuple[int, float]]:
    results = []
    for seed in seeds:
        err = model_grad_check(seed)
        logger.info("gradient check seed %d: max relative error %.3e", seed, err)
        results.append((seed, err))
    return results
