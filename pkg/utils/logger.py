import logging
import os
import sys
from pathlib import Path
from typing import Optional

# Default logging level
LOGGING_LEVEL = getattr(logging, (os.getenv("LOG_LEVEL") or "WARNING").upper(), logging.WARNING)

# Log file path; no file handler unless set.
LOG_FILE_PATH: Optional[Path] = Path(os.environ["LOG_FILE_PATH"]) if os.getenv("LOG_FILE_PATH") else None


_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
_PLAIN_FORMAT = "{asctime} {levelname:<8} {name}  {message}"

_RESET = "\x1b[0m"
_BOLD = "\x1b[1m"
_LEVEL_COLOURS = {
    logging.DEBUG: "\x1b[38m" + _BOLD,
    logging.INFO: "\x1b[34m" + _BOLD,
    logging.WARNING: "\x1b[33m" + _BOLD,
    logging.ERROR: "\x1b[31m",
    logging.CRITICAL: "\x1b[31m" + _BOLD,
}


class LoggingFormatter(logging.Formatter):
    """Console formatter with one ANSI colour per level; plain when `colour` is off."""

    def __init__(self, colour: bool = True) -> None:
        super().__init__(_PLAIN_FORMAT, _DATE_FORMAT, style="{")
        self._by_level: dict[int, logging.Formatter] = {}
        if colour:
            for level, level_colour in _LEVEL_COLOURS.items():
                fmt = (
                    f"\x1b[30m{_BOLD}{{asctime}}{_RESET} {level_colour}{{levelname:<8}}{_RESET} "
                    f"\x1b[32m{_BOLD}{{name}}{_RESET}  \x1b[36m{{message}}{_RESET}"
                )
                self._by_level[level] = logging.Formatter(fmt, _DATE_FORMAT, style="{")

    def format(self, record: logging.LogRecord) -> str:
        formatter = self._by_level.get(record.levelno)
        if formatter is None:
            return super().format(record)
        return formatter.format(record)


class PlainFormatter(logging.Formatter):
    """Plain text formatter for log files (no ANSI codes)."""

    def __init__(self) -> None:
        super().__init__(fmt=_PLAIN_FORMAT, datefmt=_DATE_FORMAT, style="{")


_console_handler: Optional[logging.Handler] = None
_file_handler: Optional[logging.Handler] = None


def _ensure_console_handler() -> logging.Handler:
    global _console_handler
    if _console_handler is not None:
        return _console_handler

    handler = logging.StreamHandler()
    handler.setLevel(LOGGING_LEVEL)
    handler.setFormatter(LoggingFormatter(colour=sys.stderr.isatty()))
    _console_handler = handler
    return handler


def _ensure_file_handler() -> Optional[logging.Handler]:
    global _file_handler
    if _file_handler is not None or LOG_FILE_PATH is None:
        return _file_handler

    LOG_FILE_PATH.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(LOG_FILE_PATH, encoding="utf-8")
    handler.setLevel(LOGGING_LEVEL)
    handler.setFormatter(PlainFormatter())
    _file_handler = handler
    return handler


def _handlers() -> list[logging.Handler]:
    return [h for h in (_ensure_console_handler(), _ensure_file_handler()) if h is not None]


def set_logger(logger: logging.Logger) -> logging.Logger:
    """Configure a logger with the console handler and, if enabled, the file handler."""

    logger.setLevel(LOGGING_LEVEL)
    logger.propagate = False

    for h in _handlers():
        if h not in logger.handlers:
            logger.addHandler(h)

    return logger


def get_logger(module: str) -> logging.Logger:
    """Get a logger named like `capstop.<module>` with handlers attached."""

    return set_logger(logging.getLogger(f"capstop.{module}"))


def init_cli_logging(verbosity: int = 0) -> None:
    """Raise the level of every capstop logger for a CLI run (-v INFO, -vv DEBUG)."""

    if verbosity <= 0:
        return
    level = logging.INFO if verbosity == 1 else logging.DEBUG
    for h in _handlers():
        h.setLevel(level)
    for name, obj in logging.Logger.manager.loggerDict.items():
        if name.startswith("capstop.") and isinstance(obj, logging.Logger):
            obj.setLevel(level)
