from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from evaluation.experiments import METHODS
from evaluation.report import REPORT_FORMATS
from models.errors import ConfigError
from tagger.model import TaggerConfig
from tagger.training import TrainConfig

logger = logging.getLogger(__name__)

CONFIG_FILENAME = "config.json"
SEED_ENV = "BOXTAG_SEED"


@dataclass
class RunConfig:
    # features
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
    use_text: bool = True
    use_visual: bool = True
    use_spatial: bool = True
    # model
    hidden: int = 64
    decoder: str = "crf"
    # training
    epochs: int = 100
    batch_size: int = 8
    lr: float = 1e-3
    patience: int = 10
    clip_norm: float = 5.0
    pad_global: bool = False
    visual_pretrain_epochs: int = 0
    workers: int = 1
    seed: int = 42
    # experiment
    method: str = "boxtagger"
    split_ratio: float = 0.8
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    report_format: str = "json"

    @staticmethod
    def from_dict(data: Mapping[str, Any], source: str = "config") -> "RunConfig":
        cfg = RunConfig()
        cfg.update(data, source)
        return cfg

    def update(self, data: Mapping[str, Any], source: str = "config") -> None:
        known = {f.name: f for f in fields(self)}
        unknown = sorted(set(data) - set(known))
        if unknown:
            raise ConfigError(f"{source}: unknown key(s): {', '.join(unknown)}")
        for key, value in data.items():
            setattr(self, key, _coerce(key, getattr(self, key), value, source))

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.report_format not in REPORT_FORMATS:
            raise ConfigError(f"report_format must be one of {REPORT_FORMATS}, got {self.report_format!r}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        try:
            self.tagger_config().validate()
            self.train_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def tagger_config(self) -> TaggerConfig:
        data = asdict(self)
        return TaggerConfig(**{f.name: data[f.name] for f in fields(TaggerConfig)})

    def train_config(self) -> TrainConfig:
        data = asdict(self)
        return TrainConfig(**{f.name: data[f.name] for f in fields(TrainConfig)})

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(key: str, default: Any, value: Any, source: str) -> Any:
    def fail() -> ConfigError:
        return ConfigError(f"{source}: {key} expects {type(default).__name__}, got {value!r}")

    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise fail()
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or float(value) != int(value):
            raise fail()
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise fail()
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise fail()
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise fail()
        return value
    return value


def load_config_file(path: Path) -> Dict[str, Any]:
    """JSON or YAML mapping (JSON is read through the YAML loader)."""
    if not path.exists():
        raise ConfigError(f"Config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: unreadable config ({exc})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a key-value mapping")
    return data


def resolve_config(
    path: Optional[Path] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """defaults < config file < BOXTAG_SEED < flags."""
    cfg = RunConfig()
    if path is not None:
        cfg.update(load_config_file(path), str(path))
    env = os.environ if environ is None else environ
    raw_seed = env.get(SEED_ENV)
    if raw_seed:
        try:
            cfg.seed = int(raw_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {raw_seed!r}") from None
    flags = {k: v for k, v in (overrides or {}).items() if v is not None}
    cfg.update(flags, "command line")
    cfg.validate()
    return cfg


def echo_config(cfg: RunConfig, folder: Path) -> Path:
    folder.mkdir(parents=True, exist_ok=True)
    out_path = folder / CONFIG_FILENAME
    out_path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return out_path
