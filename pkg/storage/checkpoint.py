"""Single-file model checkpoint.

Layout: 8-byte magic ``BOXTAG01``, an unsigned little-endian 64-bit length,
that many bytes of UTF-8 JSON (the config block, which lists every tensor's
name and shape in order), then each tensor as little-endian float64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np

from models.errors import CorpusError

MAGIC = b"BOXTAG01"
_LEN = struct.Struct("<Q")


def encode_checkpoint(meta: dict, tensors: List[Tuple[str, np.ndarray]]) -> bytes:
    block = dict(meta)
    block["tensors"] = [{"name": name, "shape": list(np.shape(value))} for name, value in tensors]
    header = json.dumps(block, sort_keys=True, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, _LEN.pack(len(header)), header]
    for _, value in tensors:
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes, source: str = "checkpoint") -> Tuple[dict, Dict[str, np.ndarray]]:
    if raw[:8] != MAGIC:
        raise CorpusError(f"{source}: not a model checkpoint (bad magic)")
    if len(raw) < 16:
        raise CorpusError(f"{source}: truncated header")
    (length,) = _LEN.unpack(raw[8:16])
    offset = 16 + length
    try:
        meta = json.loads(raw[16:offset].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorpusError(f"{source}: unreadable config block ({exc})") from None
    tensors: Dict[str, np.ndarray] = {}
    for spec in meta.get("tensors", []):
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(raw):
            raise CorpusError(f"{source}: truncated tensor {spec['name']}")
        tensors[spec["name"]] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape)
        offset = end
    if offset != len(raw):
        raise CorpusError(f"{source}: {len(raw) - offset} trailing bytes")
    return meta, tensors


def save_checkpoint(path: Path, meta: dict, tensors: List[Tuple[str, np.ndarray]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(encode_checkpoint(meta, tensors))
    tmp.replace(path)
    return path


def load_checkpoint(path: Path) -> Tuple[dict, Dict[str, np.ndarray]]:
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), str(path))
