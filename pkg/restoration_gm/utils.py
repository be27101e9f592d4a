"""Utility functions for the project."""

from __future__ import annotations

import csv
import hashlib
import json
from collections import defaultdict
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from restoration_gm.errors import ArtifactIOError

if TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    from numpy.typing import NDArray


def as_batch(array: NDArray[np.float64]) -> tuple[NDArray[np.float64], bool]:
    """Promote a vector to a one-row batch; report whether it was a vector."""
    values = np.asarray(array, dtype=np.float64)
    if values.ndim == 1:
        return values[np.newaxis, :], True
    return values, False


def unbatch(
    array: NDArray[np.float64],
    was_vector: bool,  # noqa: FBT001
) -> NDArray[np.float64]:
    """Undo `as_batch`."""
    return array[0] if was_vector else array


def group_by_step(steps: NDArray[np.int64]) -> dict[int, NDArray[np.int64]]:
    """Group example indices by their step, in ascending step order."""
    groups: dict[int, list[int]] = defaultdict(list)
    for index, step in enumerate(steps.tolist()):
        groups[int(step)].append(index)
    return {
        step: np.asarray(groups[step], dtype=np.int64) for step in sorted(groups)
    }


def canonical_json(document: Any) -> str:  # noqa: ANN401
    """Serialize `document` with sorted keys and no insignificant whitespace."""
    return json.dumps(document, sort_keys=True, separators=(',', ':'))


def config_hash(document: Any) -> str:  # noqa: ANN401
    """Return the SHA-256 hex digest of the canonical JSON of `document`."""
    return hashlib.sha256(canonical_json(document).encode()).hexdigest()


def write_json(path: Path, document: Any) -> None:  # noqa: ANN401
    """Write `document` as indented JSON, surfacing IO failures."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(document, indent=2) + '\n')
    except OSError as exception:
        msg = f'cannot write {path}: {exception}'
        raise ArtifactIOError(msg) from exception


def read_json(path: Path) -> Any:  # noqa: ANN401
    """Read a JSON document, surfacing IO and parse failures."""
    try:
        return json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exception:
        msg = f'cannot read {path}: {exception}'
        raise ArtifactIOError(msg) from exception


def write_csv(
    path: Path,
    header: Sequence[str],
    rows: Iterable[Sequence[float | int | str]],
) -> None:
    """Write rows of numbers to a CSV file; floats keep their full repr."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open('w', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(header)
            for row in rows:
                writer.writerow(
                    [repr(float(v)) if isinstance(v, float) else v for v in row],
                )
    except OSError as exception:
        msg = f'cannot write {path}: {exception}'
        raise ArtifactIOError(msg) from exception


def read_csv_matrix(path: Path) -> NDArray[np.float64]:
    """Read a numeric CSV with a header row into a `(rows, columns)` matrix."""
    try:
        with path.open(newline='') as file:
            reader = csv.reader(file)
            next(reader, None)
            rows = [[float(value) for value in row] for row in reader if row]
    except (OSError, ValueError) as exception:
        msg = f'cannot read {path}: {exception}'
        raise ArtifactIOError(msg) from exception
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), -1)


def package_version() -> str:
    """Installed version of restoration-gm, `0+unknown` from a bare checkout."""
    try:
        return version('restoration-gm')
    except PackageNotFoundError:
        return '0+unknown'


def artifact_metadata(config_digest: str, seed: int, command: str) -> dict[str, Any]:
    """Provenance stamped next to every emitted file."""
    return {
        'config_hash': config_digest,
        'seed': seed,
        'version': package_version(),
        'command': command,
    }


def write_sidecar(path: Path, metadata: Mapping[str, Any]) -> Path:
    """Write `<path>.meta.json` next to an emitted artifact."""
    sidecar = path.with_name(path.name + '.meta.json')
    write_json(sidecar, dict(metadata))
    return sidecar


def array_digest(*arrays: NDArray[np.float64]) -> str:
    """SHA-256 of the float64 bytes of `arrays`, shapes included."""
    sha256 = hashlib.sha256()
    for array in arrays:
        values = np.ascontiguousarray(array, dtype=np.float64)
        sha256.update(str(values.shape).encode())
        sha256.update(values.tobytes())
    return sha256.hexdigest()


__all__ = (
    'array_digest',
    'artifact_metadata',
    'as_batch',
    'canonical_json',
    'config_hash',
    'group_by_step',
    'package_version',
    'read_csv_matrix',
    'read_json',
    'unbatch',
    'write_csv',
    'write_json',
    'write_sidecar',
)
