"""
Console logging for run progress, physics warnings and stage failures.

Verbosity comes from the CLI flags or, when they are absent, from the
``QPBURST_LOG`` environment variable.
"""
from __future__ import annotations

import os
import sys
from enum import Enum
from typing import Optional

ENV_VAR = "QPBURST_LOG"


class LogLevel(Enum):
    """Log levels for controlling output verbosity."""
    QUIET = 0  # Only errors
    NORMAL = 1  # Stage progress and results (default)
    VERBOSE = 2  # Per-channel and per-fit details
    DEBUG = 3  # Everything, including tracebacks


_ASCII_FALLBACK = {
    "❌": "[ERROR]",
    "⚠️": "[WARNING]",
    "✅": "[OK]",
    "☢️": "[RADIATION]",
    "▶️": "[STAGE]",
    "⏱️": "[TIMELINE]",
    "🧭": "[PLAN]",
    "💾": "[DATA]",
    "📤": "[EXPORT]",
    "📄": "[FILE]",
}


def _safe_print(message: str, file=None) -> None:
    """Print a message, degrading emoji to ASCII on narrow consoles."""
    file = file if file is not None else sys.stdout
    try:
        print(message, file=file, flush=True)
    except UnicodeEncodeError:
        safe_message = message
        for emoji, replacement in _ASCII_FALLBACK.items():
            safe_message = safe_message.replace(emoji, replacement)
        print(safe_message.encode("ascii", "ignore").decode("ascii"), file=file, flush=True)


def level_from_env(default: LogLevel = LogLevel.NORMAL) -> LogLevel:
    """Resolve the log level from ``QPBURST_LOG`` (quiet|normal|verbose|debug)."""
    raw = os.environ.get(ENV_VAR, "").strip()
    if not raw:
        return default
    try:
        return LogLevel[raw.upper()]
    except KeyError:
        _safe_print(
            f"⚠️  Warning: unknown {ENV_VAR} value '{raw}', using {default.name.lower()}",
            file=sys.stderr,
        )
        return default


class Logger:
    """Centralized logger for consistent user output."""

    def __init__(self, level: LogLevel = LogLevel.NORMAL):
        self.level = level

    @property
    def show_progress(self) -> bool:
        """Whether tqdm progress bars should be drawn."""
        return self.level.value >= LogLevel.NORMAL.value

    def error(self, message: str, exc: Optional[Exception] = None) -> None:
        """Print error message. Shown unless level is QUIET."""
        if self.level == LogLevel.QUIET:
            return
        if exc and self.level.value >= LogLevel.DEBUG.value:
            import traceback
            _safe_print(f"❌ Error: {message}", file=sys.stderr)
            traceback.print_exception(type(exc), exc, exc.__traceback__, file=sys.stderr)
            return
        details = ""
        if exc:
            text = str(exc).strip()
            if text:
                details = f": {text}"
        _safe_print(f"❌ Error: {message}{details}", file=sys.stderr)

    def warning(self, message: str) -> None:
        """Print warning message. Shown for NORMAL and above."""
        if self.level.value >= LogLevel.NORMAL.value:
            _safe_print(f"⚠️  Warning: {message}", file=sys.stderr)

    def info(self, message: str) -> None:
        """Print info message. Shown for NORMAL and above."""
        if self.level.value >= LogLevel.NORMAL.value:
            _safe_print(message)

    def verbose(self, message: str) -> None:
        """Print verbose message. Shown for VERBOSE and above."""
        if self.level.value >= LogLevel.VERBOSE.value:
            _safe_print(f"[verbose] {message}")

    def debug(self, message: str) -> None:
        """Print debug message. Shown for DEBUG level only."""
        if self.level.value >= LogLevel.DEBUG.value:
            _safe_print(f"[debug] {message}")

    def dry_run(self, message: str) -> None:
        """Print dry-run message. Always shown unless QUIET."""
        if self.level == LogLevel.QUIET:
            return
        _safe_print(f"DRY RUN: {message}")


# Global logger instance (initialized by the CLI)
_logger: Optional[Logger] = None


def get_logger() -> Logger:
    """Get the global logger, falling back to the environment level."""
    if _logger is None:
        return Logger(level_from_env())
    return _logger


def set_logger(logger: Optional[Logger]) -> None:
    """Set the global logger instance."""
    global _logger
    _logger = logger


def error(message: str, exc: Optional[Exception] = None) -> None:
    get_logger().error(message, exc)


def warning(message: str) -> None:
    get_logger().warning(message)


def info(message: str) -> None:
    get_logger().info(message)


def verbose(message: str) -> None:
    get_logger().verbose(message)


def debug(message: str) -> None:
    get_logger().debug(message)


def dry_run(message: str) -> None:
    get_logger().dry_run(message)


def progress_disabled() -> bool:
    """True when tqdm bars should be suppressed."""
    return not get_logger().show_progress
