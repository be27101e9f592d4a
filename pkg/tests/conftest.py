"""Shared fixtures of the restoration-gm test suite."""

from __future__ import annotations

from typing import TYPE_CHECKING

import pytest

from restoration_gm.config import setup_restoration_gm
from restoration_gm.numerics import make_rng
from restoration_gm_pytest.fixtures import array_snapshot, snapshot_prefix

if TYPE_CHECKING:
    from restoration_gm.numerics import Rng

__all__ = ('array_snapshot', 'rng', 'snapshot_prefix')


@pytest.fixture(autouse=True, scope='session')
def _runtime() -> None:
    setup_restoration_gm({'verbosity': 0})


@pytest.fixture
def rng() -> Rng:
    """A generator seeded identically for every test."""
    return make_rng(1234)
