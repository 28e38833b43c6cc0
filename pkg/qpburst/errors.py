"""Exception hierarchy shared by the toolkit."""
from __future__ import annotations


class QpBurstError(Exception):
    """Base class for all toolkit errors."""


class DomainError(QpBurstError, ValueError):
    """A physical or numerical precondition was violated."""


class ConfigError(QpBurstError, ValueError):
    """Invalid configuration; ``field`` is the dotted path of the culprit."""

    def __init__(self, field: str, message: str) -> None:
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class StageError(QpBurstError, RuntimeError):
    """A pipeline stage failed."""

    def __init__(self, stage: str, message: str) -> None:
        self.stage = stage
        super().__init__(f"stage '{stage}' failed: {message}")


class FormatError(QpBurstError, ValueError):
    """A stored artifact does not match its file format."""
