"""Logging configuration for restoration-gm."""

import logging
import sys
from pathlib import Path

logger = logging.getLogger('restoration-gm')
logger.setLevel(logging.INFO)
logger.propagate = False

_FORMATTER = logging.Formatter(
    '%(created)f [%(levelname)s] %(message)s',
    '%Y-%m-%d %H:%M:%S',
)


def add_stdout_handler(level: int = logging.DEBUG) -> None:
    """Add a stdout handler to the logger, once."""
    if any(getattr(handler, 'name', None) == 'stdout' for handler in logger.handlers):
        return
    stdout_handler = logging.StreamHandler(sys.stdout)
    stdout_handler.set_name('stdout')
    stdout_handler.setLevel(level)
    stdout_handler.setFormatter(_FORMATTER)
    logger.addHandler(stdout_handler)


def add_file_handler(path: str | Path = 'restoration-gm.log') -> None:
    """Add a file handler writing to `path` to the logger, once per file."""
    target = Path(path).resolve()
    if any(
        isinstance(handler, logging.FileHandler)
        and Path(handler.baseFilename).resolve() == target
        for handler in logger.handlers
    ):
        return
    file_handler = logging.FileHandler(target)
    file_handler.setLevel(logging.DEBUG)
    file_handler.setFormatter(_FORMATTER)
    logger.addHandler(file_handler)


def set_verbosity(verbosity: int) -> None:
    """Map a `-v` count to a logger level."""
    logger.setLevel(logging.DEBUG if verbosity > 0 else logging.INFO)


__all__ = ('add_file_handler', 'add_stdout_handler', 'logger', 'set_verbosity')
