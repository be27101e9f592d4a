"""Utility fixtures for testing restoration-gm."""

from .snapshot import ArraySnapshot, array_snapshot, snapshot_prefix

__all__ = (
    'ArraySnapshot',
    'array_snapshot',
    'snapshot_prefix',
)
