"""Exceptions raised by restoration-gm, each mapped to a CLI exit code."""

from __future__ import annotations

from typing import ClassVar

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISMATCH = 3
EXIT_NUMERICAL = 4
EXIT_IO = 5


class RestorationGMError(Exception):
    """Base class of every error raised by the package."""

    exit_code: ClassVar[int] = 1


class InvalidArgumentError(RestorationGMError, ValueError):
    """An argument violates the precondition of an operation."""

    exit_code = EXIT_USAGE


class InvalidStateError(RestorationGMError, RuntimeError):
    """An object is used in a state it does not support (stale tape, mismatch)."""

    exit_code = EXIT_MISMATCH


class UnsupportedScheduleError(RestorationGMError):
    """The degradation schedule does not decompose where it is required to."""

    exit_code = EXIT_MISMATCH


class ConfigError(RestorationGMError, ValueError):
    """A configuration document is malformed or inconsistent."""

    exit_code = EXIT_MISMATCH


class ScheduleMismatchError(InvalidStateError):
    """A checkpoint was produced for another degradation schedule."""


class NumericalFailureError(RestorationGMError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""

    exit_code = EXIT_NUMERICAL


class ArtifactIOError(RestorationGMError, OSError):
    """Reading or writing an artifact failed."""

    exit_code = EXIT_IO


class CheckpointError(ArtifactIOError):
    """A checkpoint file cannot be used."""


class CheckpointVersionError(CheckpointError):
    """A checkpoint was written with an unknown format version."""


class CorruptCheckpointError(CheckpointError):
    """A checkpoint file is truncated or not valid JSON."""


__all__ = (
    'EXIT_IO',
    'EXIT_MISMATCH',
    'EXIT_NUMERICAL',
    'EXIT_OK',
    'EXIT_USAGE',
    'ArtifactIOError',
    'CheckpointError',
    'CheckpointVersionError',
    'ConfigError',
    'CorruptCheckpointError',
    'InvalidArgumentError',
    'InvalidStateError',
    'NumericalFailureError',
    'RestorationGMError',
    'ScheduleMismatchError',
    'UnsupportedScheduleError',
)
