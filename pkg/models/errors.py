from __future__ import annotations

from pathlib import Path
from typing import Optional


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, message: str, line: Optional[int] = None, path: Optional[Path] = None):
        self.reason = message
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class EmptyCorpusError(CorpusError):
    pass


class ShapeError(ValueError):
    pass


class NumericError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass
