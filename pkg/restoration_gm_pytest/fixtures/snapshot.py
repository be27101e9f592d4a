"""Let the test check snapshots of arrays produced during execution."""

from __future__ import annotations

import os
from collections import defaultdict
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pytest
from str_to_bool import str_to_bool

from restoration_gm.evaldata import write_image_grid, write_scatter_png
from restoration_gm.utils import array_digest

if TYPE_CHECKING:
    from collections.abc import Generator

    from _pytest.fixtures import SubRequest  # pyright: ignore[reportPrivateImportUsage]
    from numpy.typing import NDArray


def write_image(
    image_path: Path,
    array: NDArray[np.float64],
    shape: tuple[int, int, int] | None,
) -> None:
    """Render 2-D points as a scatter, or flat images as a grid."""
    if shape is not None:
        write_image_grid(image_path, np.atleast_2d(array), shape)
    elif array.ndim == 2 and array.shape[1] == 2:  # noqa: PLR2004
        write_scatter_png(image_path, array)


class ArraySnapshot:
    """Context object for tests taking snapshots of arrays.

    A snapshot is the SHA-256 of the float64 bytes of the array. A snapshot seen
    for the first time is recorded; a different value later fails the test and
    leaves a `.mismatch.hash` file next to the recorded one.
    """

    def __init__(
        self: ArraySnapshot,
        *,
        test_id: str,
        path: Path,
        override: bool,
        make_images: bool,
        prefix: str | None,
    ) -> None:
        """Create a new array snapshot context."""
        self.prefix = prefix
        self._is_failed = False
        self._is_closed = False
        self.override = override
        self.make_images = make_images
        self.test_counter: dict[str | None, int] = defaultdict(int)
        file = path.with_suffix('').name
        self.results_dir = Path(
            path.parent / 'results' / file / test_id.rsplit('::', 1)[-1][5:],
        )
        if self.results_dir.exists():
            prefix_element = ''
            if self.prefix:
                prefix_element = self.prefix + '-'
            for file in self.results_dir.glob(
                f'array-{prefix_element}*'
                if override
                else f'array-{prefix_element}*.mismatch.*',
            ):
                file.unlink()
        self.results_dir.mkdir(parents=True, exist_ok=True)

    def get_filename(self: ArraySnapshot, title: str | None) -> str:
        """Get the filename for the snapshot."""
        title_element = ''
        if title:
            title_element = title + '-'
        prefix_element = ''
        if self.prefix:
            prefix_element = self.prefix + '-'
        return f'array-{prefix_element}{title_element}{self.test_counter[title]:03d}'

    def take(
        self: ArraySnapshot,
        array: NDArray[np.float64],
        title: str | None = None,
        shape: tuple[int, int, int] | None = None,
    ) -> str:
        """Compare the digest of `array` with the recorded one and return it."""
        if self._is_closed:
            msg = 'Snapshot context is closed, take snapshots inside the test body'
            raise RuntimeError(msg)

        filename = self.get_filename(title)
        path = Path(self.results_dir / filename)
        hash_path = path.with_suffix('.hash')
        image_path = path.with_suffix('.png')
        hash_mismatch_path = path.with_suffix('.mismatch.hash')
        image_mismatch_path = path.with_suffix('.mismatch.png')

        new_snapshot = array_digest(array)
        if self.override or not hash_path.exists():
            hash_path.write_text(f'// {filename}\n{new_snapshot}\n')
            if self.make_images:
                write_image(image_path, array, shape)
        else:
            old_snapshot = hash_path.read_text().split('\n', 1)[1][:-1]
            if old_snapshot != new_snapshot:
                self._is_failed = True
                hash_mismatch_path.write_text(  # pragma: no cover
                    f'// MISMATCH: {filename}\n{new_snapshot}\n',
                )
                if self.make_images:
                    write_image(image_mismatch_path, array, shape)
            elif self.make_images:
                write_image(image_path, array, shape)
            assert new_snapshot == old_snapshot, f'Array snapshot mismatch - {filename}'

        self.test_counter[title] += 1
        return new_snapshot

    def close(self: ArraySnapshot) -> None:
        """Close the snapshot context."""
        self._is_closed = True
        if self._is_failed:
            return
        for title in self.test_counter:
            filename = self.get_filename(title)
            hash_path = (self.results_dir / filename).with_suffix('.hash')

            assert not hash_path.exists(), f'Snapshot {filename} not taken'


@pytest.fixture
def snapshot_prefix() -> str | None:
    """Return the prefix for the snapshots."""
    return None


@pytest.fixture
def array_snapshot(
    request: SubRequest,
    snapshot_prefix: str | None,
) -> Generator[ArraySnapshot, None, None]:
    """Check digests of arrays against recorded ones."""
    override = request.config.getoption('--override-snapshots') is True or bool(
        str_to_bool(os.environ.get('RGM_TEST_OVERRIDE_SNAPSHOTS', 'false')),
    )
    make_images = request.config.getoption('--make-images') is True or bool(
        str_to_bool(os.environ.get('RGM_TEST_MAKE_IMAGES', 'false')),
    )

    context = ArraySnapshot(
        test_id=request.node.nodeid,
        path=request.node.path,
        override=override,
        make_images=make_images,
        prefix=snapshot_prefix,
    )
    yield context
    context.close()
