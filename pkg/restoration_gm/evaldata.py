"""Toy datasets and the metrics that score generated samples against them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from restoration_gm.constants import (
    COVERAGE_THRESHOLD,
    DATA_RANGE,
    GMM_MODES,
    GMM_RADIUS,
    GMM_STD,
    PSNR_CAP,
    TOY_IMAGE_SIZE,
)
from restoration_gm.errors import ArtifactIOError, InvalidArgumentError
from restoration_gm.numerics import make_rng
from restoration_gm.utils import read_csv_matrix, read_json, write_csv, write_json

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from restoration_gm.config import DatasetConfig, ImageFamily
    from restoration_gm.numerics import Rng


@dataclass(frozen=True)
class GMM8Spec:
    """Isotropic Gaussians with centers equally spaced on a circle."""

    radius: float = GMM_RADIUS
    std: float = GMM_STD
    modes: int = GMM_MODES
    standardize: bool = True

    def __post_init__(self: GMM8Spec) -> None:
        """Check the geometry."""
        if self.radius <= 0 or self.std <= 0 or self.modes < 1:
            msg = f'invalid mixture geometry {self}'
            raise InvalidArgumentError(msg)

    @property
    def scale(self: GMM8Spec) -> float:
        """Per-coordinate standard deviation of the raw mixture, or 1."""
        if not self.standardize:
            return 1.0
        return math.sqrt(self.radius**2 / 2.0 + self.std**2)

    @property
    def centers(self: GMM8Spec) -> NDArray[np.float64]:
        """`(modes, 2)` centers in the output coordinates."""
        angles = 2.0 * np.pi * np.arange(self.modes) / self.modes
        points = self.radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        return points / self.scale

    @property
    def component_std(self: GMM8Spec) -> float:
        """Within-mode standard deviation in the output coordinates."""
        return self.std / self.scale


def sample_gmm8(n: int, spec: GMM8Spec, rng: Rng) -> NDArray[np.float64]:
    """Draw `n` points, choosing each component uniformly."""
    if n < 1:
        msg = f'n must be at least 1, got {n}'
        raise InvalidArgumentError(msg)
    components = rng.integers(0, spec.modes, size=n)
    return spec.centers[components] + spec.component_std * rng.standard_normal((n, 2))


class Coverage(NamedTuple):
    """Modes holding at least the threshold share of samples near their center."""

    covered: int
    fractions: NDArray[np.float64]


def mode_coverage(
    samples: NDArray[np.float64],
    spec: GMM8Spec,
    radius: float | None = None,
    threshold: float = COVERAGE_THRESHOLD,
) -> Coverage:
    """Assign samples to their nearest center and count well-populated modes.

    `radius` defaults to three component standard deviations; fractions are taken
    over all samples, so far-away samples count against every mode.
    """
    points = np.asarray(samples, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 2:  # noqa: PLR2004
        msg = f'mode coverage needs 2-D points, got shape {points.shape}'
        raise InvalidArgumentError(msg)
    radius = 3.0 * spec.component_std if radius is None else radius
    fractions = np.zeros(spec.modes)
    if not points.shape[0]:
        return Coverage(covered=0, fractions=fractions)
    distances = np.linalg.norm(
        points[:, np.newaxis, :] - spec.centers[np.newaxis, :, :],
        axis=2,
    )
    nearest = np.argmin(distances, axis=1)
    close = distances[np.arange(points.shape[0]), nearest] <= radius
    counts = np.bincount(nearest[close], minlength=spec.modes)
    fractions = counts / points.shape[0]
    return Coverage(covered=int(np.sum(fractions >= threshold)), fractions=fractions)


def _mean_distance(
    a: NDArray[np.float64],
    b: NDArray[np.float64],
    chunk: int,
) -> float:
    total = 0.0
    b_norms = np.sum(b * b, axis=1)
    for start in range(0, a.shape[0], chunk):
        block = a[start : start + chunk]
        squared = (
            np.sum(block * block, axis=1)[:, np.newaxis]
            + b_norms[np.newaxis, :]
            - 2.0 * block @ b.T
        )
        total += float(np.sum(np.sqrt(np.maximum(squared, 0.0))))
    return total / (a.shape[0] * b.shape[0])


def energy_distance(
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    chunk: int = 1024,
) -> float:
    """`2 E||x - y|| - E||x - x'|| - E||y - y'||` over all pairs (V-statistic)."""
    a = np.asarray(x, dtype=np.float64)
    b = np.asarray(y, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:  # noqa: PLR2004
        msg = f'batches must be 2-D with equal width, got {a.shape} and {b.shape}'
        raise InvalidArgumentError(msg)
    if not a.shape[0] or not b.shape[0]:
        msg = 'energy distance needs nonempty batches'
        raise InvalidArgumentError(msg)
    return (
        2.0 * _mean_distance(a, b, chunk)
        - _mean_distance(a, a, chunk)
        - _mean_distance(b, b, chunk)
    )


def _check_pair(x: NDArray[np.float64], ref: NDArray[np.float64]) -> None:
    if np.shape(x) != np.shape(ref):
        msg = f'shapes differ: {np.shape(x)} and {np.shape(ref)}'
        raise InvalidArgumentError(msg)


def psnr(
    x: NDArray[np.float64],
    ref: NDArray[np.float64],
    peak: float = DATA_RANGE,
) -> float:
    """Peak signal-to-noise ratio in dB, capped for exact matches."""
    _check_pair(x, ref)
    mse = float(np.mean((np.asarray(x) - np.asarray(ref)) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(10.0 * math.log10(peak * peak / mse), PSNR_CAP)


def ssim(
    x: NDArray[np.float64],
    ref: NDArray[np.float64],
    peak: float = DATA_RANGE,
) -> float:
    """Structural similarity over a single window covering the whole image."""
    _check_pair(x, ref)
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(ref, dtype=np.float64).reshape(-1)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mean_a, mean_b = float(np.mean(a)), float(np.mean(b))
    var_a, var_b = float(np.var(a)), float(np.var(b))
    covariance = float(np.mean((a - mean_a) * (b - mean_b)))
    return ((2.0 * mean_a * mean_b + c1) * (2.0 * covariance + c2)) / (
        (mean_a**2 + mean_b**2 + c1) * (var_a + var_b + c2)
    )


@dataclass(frozen=True)
class ToyImageSpec:
    """Procedural `size x size` images of one family."""

    size: int = TOY_IMAGE_SIZE
    channels: int = 1
    family: ImageFamily = 'blobs'
    seed: int = 0
    cell_sizes: tuple[int, ...] = (1, 2, 4)
    blob_counts: tuple[int, int] = (1, 3)
    blob_widths: tuple[float, float] = (1.5, 4.0)

    def __post_init__(self: ToyImageSpec) -> None:
        """Check sizes and the family."""
        if self.size < 8 or self.size % 8:  # noqa: PLR2004
            msg = f'image size must be a positive multiple of 8, got {self.size}'
            raise InvalidArgumentError(msg)
        if self.channels not in (1, 3):
            msg = f'images have 1 or 3 channels, got {self.channels}'
            raise InvalidArgumentError(msg)
        if self.family not in ('blobs', 'gradients', 'checkerboards'):
            msg = f'unknown image family {self.family!r}'
            raise InvalidArgumentError(msg)
        if not self.cell_sizes or any(c < 1 for c in self.cell_sizes):
            msg = f'cell sizes must be positive, got {self.cell_sizes}'
            raise InvalidArgumentError(msg)

    @property
    def shape(self: ToyImageSpec) -> tuple[int, int, int]:
        """`(H, W, C)` of one image."""
        return self.size, self.size, self.channels


def _blobs(spec: ToyImageSpec, rng: Rng) -> NDArray[np.float64]:
    rows, columns = np.mgrid[0 : spec.size, 0 : spec.size].astype(np.float64)
    image = np.zeros((spec.size, spec.size))
    low, high = spec.blob_counts
    for _ in range(int(rng.integers(low, high + 1))):
        center = rng.uniform(0, spec.size, size=2)
        width = rng.uniform(*spec.blob_widths)
        amplitude = rng.uniform(0.5, 1.0)
        image += amplitude * np.exp(
            -((rows - center[0]) ** 2 + (columns - center[1]) ** 2)
            / (2.0 * width * width),
        )
    return np.clip(image, 0.0, 1.0)


def _gradient(spec: ToyImageSpec, rng: Rng) -> NDArray[np.float64]:
    rows, columns = np.mgrid[0 : spec.size, 0 : spec.size].astype(np.float64)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    ramp = np.cos(angle) * rows + np.sin(angle) * columns
    ramp = (ramp - ramp.min()) / max(float(np.ptp(ramp)), 1e-12)
    low = rng.uniform(0.0, 0.4)
    high = rng.uniform(0.6, 1.0)
    return low + (high - low) * ramp


def _checkerboard(spec: ToyImageSpec, rng: Rng) -> NDArray[np.float64]:
    cell = int(rng.choice(spec.cell_sizes))
    rows, columns = np.mgrid[0 : spec.size, 0 : spec.size]
    phase = int(rng.integers(0, 2))
    parity = (rows // cell + columns // cell + phase) % 2
    low = rng.uniform(0.0, 0.3)
    high = rng.uniform(0.7, 1.0)
    return np.where(parity == 1, high, low)


_FAMILIES = {
    'blobs': _blobs,
    'gradients': _gradient,
    'checkerboards': _checkerboard,
}


def make_toy_images(spec: ToyImageSpec, n: int) -> NDArray[np.float64]:
    """`n` flat `(H, W, C)` images with values in `[-1, 1]`, deterministic in seed."""
    if n < 1:
        msg = f'n must be at least 1, got {n}'
        raise InvalidArgumentError(msg)
    rng = make_rng(spec.seed)
    draw = _FAMILIES[spec.family]
    images = np.empty((n, *spec.shape))
    for index in range(n):
        base = draw(spec, rng)
        tint = (
            np.ones(1) if spec.channels == 1 else rng.uniform(0.5, 1.0, spec.channels)
        )
        images[index] = base[:, :, np.newaxis] * tint[np.newaxis, np.newaxis, :]
    return (2.0 * images - 1.0).reshape(n, -1)


def load_dataset(config: DatasetConfig) -> NDArray[np.float64]:
    """Build the training set an experiment file describes."""
    seed = config.get('seed', 0)
    if config['kind'] == 'gmm8':
        return sample_gmm8(
            config['size'],
            GMM8Spec(standardize=config.get('standardize', True)),
            make_rng(seed),
        )
    if config['kind'] == 'toy-images':
        return make_toy_images(
            ToyImageSpec(
                size=config.get('image_size', TOY_IMAGE_SIZE),
                channels=config.get('channels', 1),
                family=config.get('family', 'blobs'),
                seed=seed,
            ),
            config['size'],
        )
    msg = f'unknown dataset kind {config["kind"]!r}'
    raise InvalidArgumentError(msg)


def dataset_shape(config: DatasetConfig) -> list[int]:
    """Shape of one data point of the described dataset."""
    if config['kind'] == 'gmm8':
        return [2]
    size = config.get('image_size', TOY_IMAGE_SIZE)
    return [size, size, config.get('channels', 1)]


def write_points_csv(path: Path, points: NDArray[np.float64]) -> None:
    """One row per point, one column `x<i>` per coordinate."""
    write_csv(
        path,
        [f'x{i}' for i in range(points.shape[1])],
        points.tolist(),
    )


def read_points_csv(path: Path) -> NDArray[np.float64]:
    """Inverse of `write_points_csv`."""
    return read_csv_matrix(path)


def write_images_json(
    path: Path,
    images: NDArray[np.float64],
    shape: tuple[int, ...],
) -> None:
    """A shape header and one flat value list per image."""
    write_json(
        path,
        {
            'shape': list(shape),
            'count': int(images.shape[0]),
            'images': images.reshape(images.shape[0], -1).tolist(),
        },
    )


def read_images_json(path: Path) -> tuple[NDArray[np.float64], tuple[int, ...]]:
    """Inverse of `write_images_json`: flat images and the shape of one image."""
    document = read_json(path)
    try:
        shape = tuple(int(d) for d in document['shape'])
        images = np.asarray(document['images'], dtype=np.float64).reshape(
            len(document['images']),
            math.prod(shape),
        )
    except (KeyError, TypeError, ValueError) as exception:
        msg = f'{path} is not an image file: {exception}'
        raise ArtifactIOError(msg) from exception
    return images, shape


def read_samples(path: Path) -> NDArray[np.float64]:
    """Read a CSV point file or a JSON image file into flat rows."""
    if Path(path).suffix == '.json':
        return read_images_json(path)[0]
    return read_points_csv(path)


def _write_png(path: Path, rows: NDArray[np.uint8], *, greyscale: bool) -> None:
    try:
        import png
    except ImportError as exception:
        msg = 'PNG output needs the `image` extra (pypng)'
        raise ArtifactIOError(msg) from exception
    height, width = rows.shape[0], rows.shape[1] // (1 if greyscale else 3)
    try:
        with Path(path).open('wb') as file:
            png.Writer(
                width=width,
                height=height,
                greyscale=greyscale,  # pyright: ignore [reportArgumentType]
                bitdepth=8,
            ).write(file, rows.tolist())
    except OSError as exception:
        msg = f'cannot write {path}: {exception}'
        raise ArtifactIOError(msg) from exception


def write_image_grid(
    path: Path,
    images: NDArray[np.float64],
    shape: tuple[int, int, int],
    columns: int = 8,
) -> None:
    """Tile images with values in `[-1, 1]` into one PNG."""
    height, width, channels = shape
    count = images.shape[0]
    grid_rows = math.ceil(count / columns)
    canvas = np.zeros((grid_rows * height, columns * width, channels))
    for index, image in enumerate(images.reshape(count, height, width, channels)):
        row, column = divmod(index, columns)
        top, left = row * height, column * width
        canvas[top : top + height, left : left + width] = image
    pixels = np.clip(np.round((canvas + 1.0) * 127.5), 0, 255).astype(np.uint8)
    _write_png(
        path,
        pixels.reshape(pixels.shape[0], -1),
        greyscale=channels == 1,
    )


def write_scatter_png(
    path: Path,
    points: NDArray[np.float64],
    size: int = 256,
    extent: float = 2.0,
) -> None:
    """Render 2-D points as a density image over `[-extent, extent]^2`."""
    counts, _, _ = np.histogram2d(
        points[:, 1],
        points[:, 0],
        bins=size,
        range=[[-extent, extent], [-extent, extent]],
    )
    scaled = np.log1p(counts[::-1])
    peak = float(scaled.max()) or 1.0
    pixels = (255 - np.round(255 * scaled / peak)).astype(np.uint8)
    _write_png(path, pixels, greyscale=True)


__all__ = (
    'Coverage',
    'GMM8Spec',
    'ToyImageSpec',
    'dataset_shape',
    'energy_distance',
    'load_dataset',
    'make_toy_images',
    'mode_coverage',
    'psnr',
    'read_images_json',
    'read_points_csv',
    'read_samples',
    'sample_gmm8',
    'ssim',
    'write_image_grid',
    'write_images_json',
    'write_points_csv',
    'write_scatter_png',
)
