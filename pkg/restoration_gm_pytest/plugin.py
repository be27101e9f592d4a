"""Pytest plugin for restoration-gm."""

import pytest

from restoration_gm.constants import RUN_SLOW


@pytest.hookimpl
def pytest_addoption(parser: pytest.Parser) -> None:
    """Add options to the pytest command line."""
    group = parser.getgroup('restoration-gm', 'restoration-gm options')
    group.addoption('--override-snapshots', action='store_true')
    group.addoption('--make-images', action='store_true')
    group.addoption(
        '--run-slow',
        action='store_true',
        help='run the end-to-end training runs marked `slow`',
    )


@pytest.hookimpl
def pytest_configure(config: pytest.Config) -> None:
    """Register the markers of the plugin."""
    config.addinivalue_line('markers', 'slow: end-to-end run taking minutes')


@pytest.hookimpl
def pytest_collection_modifyitems(
    config: pytest.Config,
    items: list[pytest.Item],
) -> None:
    """Skip slow tests unless asked for."""
    if config.getoption('--run-slow') or RUN_SLOW:
        return
    skip = pytest.mark.skip(reason='needs --run-slow or RGM_RUN_SLOW=true')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)
