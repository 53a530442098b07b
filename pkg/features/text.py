from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from models.errors import ParseError
from models.invoice import BoundingBox
from neural.core import Parameter

logger = logging.getLogger(__name__)

NUMBER = "#NUMBER#"
NAME = "#NAME#"
PLACEHOLDERS = frozenset({NUMBER, NAME})

_NUMBER_RE = re.compile(r"^[\d.,]*\d[\d.,]*$")
_STOPWORDS = frozenset(
    """
    a an and are as at be by for from in into is it no not of on or the to with
    total amount date tel fax cash change tax invoice receipt qty price
    """.split()
)


@dataclass(frozen=True)
class Token:
    surface: str
    is_placeholder: bool = False


@dataclass
class TextFeatureConfig:
    dim: int = 64
    pooling: str = "mean"
    weighting_constant: float = 1e-3
    lowercase: bool = True
    number_placeholder: bool = True
    name_heuristic: bool = False

    def validate(self) -> None:
        if self.dim <= 0:
            raise ValueError(f"text dim must be positive, got {self.dim}")
        if self.pooling not in ("mean", "weighted"):
            raise ValueError(f"pooling must be 'mean' or 'weighted', got {self.pooling!r}")
        if self.weighting_constant <= 0:
            raise ValueError("weighting constant must be positive")


def normalize_tokens(text: str, cfg: TextFeatureConfig) -> List[Token]:
    tokens: List[Token] = []
    for raw in text.split():
        if raw in PLACEHOLDERS:
            tokens.append(Token(raw, True))
        elif cfg.number_placeholder and _NUMBER_RE.match(raw):
            tokens.append(Token(NUMBER, True))
        elif cfg.name_heuristic and raw.isalpha() and raw[0].isupper() and raw.casefold() not in _STOPWORDS:
            tokens.append(Token(NAME, True))
        else:
            tokens.append(Token(raw.casefold() if cfg.lowercase else raw))
    return tokens


def token_frequencies(texts: Iterable[str], cfg: TextFeatureConfig) -> Dict[str, float]:
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(tok.surface for tok in normalize_tokens(text, cfg))
    total = sum(counts.values())
    if not total:
        return {}
    return {word: counts[word] / total for word in sorted(counts)}


def token_weights(
    tokens: Sequence[Token], cfg: TextFeatureConfig, freq: Optional[Dict[str, float]] = None
) -> np.ndarray:
    if cfg.pooling == "mean":
        return np.ones(len(tokens))
    freq = freq or {}
    a = cfg.weighting_constant
    return np.array([a / (a + freq.get(tok.surface, 0.0)) for tok in tokens], dtype=np.float64)


# -- providers ------------------------------------------------------------------------------


def stable_hash(token: str) -> int:
    return int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")


class EmbeddingProvider:
    dim: int
    trainable: bool = False

    def embed(self, token: str) -> np.ndarray:
        raise NotImplementedError


class HashedProvider(EmbeddingProvider):
    """Token -> stable 64-bit hash -> row of a seeded table."""

    def __init__(self, dim: int, vocab_size: int, seed: int = 0, trainable: bool = True, name: str = "text.table"):
        if dim <= 0 or vocab_size <= 0:
            raise ValueError(f"dim and vocab_size must be positive, got {dim}, {vocab_size}")
        self.dim = dim
        self.vocab_size = vocab_size
        self.seed = seed
        self.trainable = trainable
        rng = np.random.default_rng(seed)
        bound = 0.5 / dim
        self.table = Parameter(name, rng.uniform(-bound, bound, size=(vocab_size, dim)))

    def row(self, token: str) -> int:
        return stable_hash(token) % self.vocab_size

    def embed(self, token: str) -> np.ndarray:
        return self.table.value[self.row(token)].copy()


class VectorFileProvider(EmbeddingProvider):
    """Frozen vectors read from a GloVe-style text file, hashed fallback for unknown words."""

    trainable = False

    def __init__(self, words: List[str], vectors: np.ndarray, fallback_vocab: int = 4096, seed: int = 0):
        self.words = list(words)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.dim = int(self.vectors.shape[1])
        self.index = {w: i for i, w in enumerate(self.words)}
        self.fallback = HashedProvider(self.dim, fallback_vocab, seed, trainable=False, name="text.fallback")

    def embed(self, token: str) -> np.ndarray:
        idx = self.index.get(token)
        if idx is None:
            return self.fallback.embed(token)
        return self.vectors[idx].copy()


def hashed_provider(dim: int, vocab_size: int, seed: int = 0) -> HashedProvider:
    return HashedProvider(dim, vocab_size, seed)


def load_vector_file(path: Path, fallback_vocab: int = 4096, seed: int = 0) -> VectorFileProvider:
    logger.info("Loading vectors from %s", path)
    words: List[str] = []
    rows: List[List[float]] = []
    dim: Optional[int] = None
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            parts = line.split()
            if not parts:
                continue
            word, values = parts[0], parts[1:]
            try:
                vector = [float(v) for v in values]
            except ValueError:
                raise ParseError("unparsable float in vector", line_no, path) from None
            if dim is None:
                dim = len(vector)
                if dim == 0:
                    raise ParseError("vector has no components", line_no, path)
            elif len(vector) != dim:
                raise ParseError(f"vector length {len(vector)} differs from {dim}", line_no, path)
            words.append(word)
            rows.append(vector)
    if dim is None:
        raise ParseError("vector file is empty", path=path)
    return VectorFileProvider(words, np.array(rows, dtype=np.float64), fallback_vocab, seed)


# -- pooling --------------------------------------------------------------------------------


def pool(vectors: np.ndarray, weights: np.ndarray, dim: int) -> np.ndarray:
    if len(vectors) == 0:
        return np.zeros(dim)
    if len(vectors) == 1:
        return np.array(vectors[0], dtype=np.float64)
    return (weights[:, None] * vectors).sum(axis=0) / weights.sum()


def embed_box(
    box: BoundingBox,
    provider: EmbeddingProvider,
    cfg: TextFeatureConfig,
    freq: Optional[Dict[str, float]] = None,
) -> np.ndarray:
    if provider.dim != cfg.dim:
        raise ValueError(f"provider dim {provider.dim} differs from configured {cfg.dim}")
    tokens = normalize_tokens(box.text, cfg)
    if not tokens:
        return np.zeros(cfg.dim)
    if cfg.pooling == "mean":
        return np.mean(np.stack([provider.embed(t.surface) for t in tokens]), axis=0)
    vectors = np.stack([provider.embed(t.surface) for t in tokens])
    return pool(vectors, token_weights(tokens, cfg, freq), cfg.dim)


# -- trainable batch path -------------------------------------------------------------------


@dataclass
class TokenIndex:
    """Table rows and pooling weights of every box, flattened for scatter/gather."""

    rows: np.ndarray
    weights: np.ndarray
    segment: np.ndarray
    weight_sum: np.ndarray = field(default_factory=lambda: np.zeros(0))


def index_boxes(
    boxes: Sequence[BoundingBox],
    provider: HashedProvider,
    cfg: TextFeatureConfig,
    freq: Optional[Dict[str, float]] = None,
) -> TokenIndex:
    rows: List[int] = []
    weights: List[float] = []
    segment: List[int] = []
    weight_sum = np.zeros(len(boxes))
    for pos, box in enumerate(boxes):
        tokens = normalize_tokens(box.text, cfg)
        w = token_weights(tokens, cfg, freq)
        rows.extend(provider.row(t.surface) for t in tokens)
        weights.extend(w.tolist())
        segment.extend([pos] * len(tokens))
        weight_sum[pos] = float(w.sum())
    return TokenIndex(
        rows=np.array(rows, dtype=np.int64),
        weights=np.array(weights, dtype=np.float64),
        segment=np.array(segment, dtype=np.int64),
        weight_sum=weight_sum,
    )


def pooled_lookup(index: TokenIndex, table: Parameter, n_boxes: int) -> np.ndarray:
    out = np.zeros((n_boxes, table.shape[1]))
    if index.rows.size:
        np.add.at(out, index.segment, index.weights[:, None] * table.value[index.rows])
    # boxes without tokens keep the zero vector
    safe = np.where(index.weight_sum > 0, index.weight_sum, 1.0)
    return out / safe[:, None]


def pooled_lookup_backward(index: TokenIndex, table: Parameter, d_out: np.ndarray) -> None:
    if not index.rows.size:
        return
    safe = np.where(index.weight_sum > 0, index.weight_sum, 1.0)
    scaled = d_out / safe[:, None]
    np.add.at(table.grad, index.rows, index.weights[:, None] * scaled[index.segment])
