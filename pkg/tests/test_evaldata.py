"""Toy datasets, sample files and evaluation metrics."""

# ruff: noqa: D103
from __future__ import annotations

import math
from typing import TYPE_CHECKING, cast

import numpy as np
import pytest

from restoration_gm.errors import ArtifactIOError, InvalidArgumentError
from restoration_gm.evaldata import (
    GMM8Spec,
    ToyImageSpec,
    dataset_shape,
    energy_distance,
    load_dataset,
    make_toy_images,
    mode_coverage,
    psnr,
    read_images_json,
    read_points_csv,
    read_samples,
    sample_gmm8,
    ssim,
    write_image_grid,
    write_images_json,
    write_points_csv,
    write_scatter_png,
)
from restoration_gm.numerics import make_rng

if TYPE_CHECKING:
    from pathlib import Path

    from restoration_gm.config import DatasetConfig, ImageFamily
    from restoration_gm.numerics import Rng


def test_standardized_mixture_moments() -> None:
    points = sample_gmm8(20_000, GMM8Spec(), make_rng(4))
    assert points.shape == (20_000, 2)
    np.testing.assert_allclose(points.mean(axis=0), 0.0, atol=0.05)
    np.testing.assert_allclose(points.std(axis=0), 1.0, atol=0.05)


def test_raw_mixture_centers() -> None:
    spec = GMM8Spec(standardize=False)
    assert spec.scale == 1.0
    np.testing.assert_allclose(np.linalg.norm(spec.centers, axis=1), 2.0)
    np.testing.assert_allclose(spec.centers[2], [0.0, 2.0], atol=1e-12)


def test_mixture_rejects_bad_geometry() -> None:
    with pytest.raises(InvalidArgumentError):
        GMM8Spec(std=0.0)
    with pytest.raises(InvalidArgumentError):
        sample_gmm8(0, GMM8Spec(), make_rng(0))


def test_mode_coverage(rng: Rng) -> None:
    spec = GMM8Spec()
    assert mode_coverage(sample_gmm8(4000, spec, rng), spec).covered == 8
    collapsed = np.tile(spec.centers[3], (500, 1))
    coverage = mode_coverage(collapsed, spec)
    assert coverage.covered == 1
    assert coverage.fractions[3] == 1.0
    far = np.full((100, 2), 50.0)
    assert mode_coverage(far, spec).covered == 0
    assert mode_coverage(np.empty((0, 2)), spec).covered == 0
    with pytest.raises(InvalidArgumentError):
        mode_coverage(np.zeros((4, 3)), spec)


def test_energy_distance(rng: Rng) -> None:
    x = rng.standard_normal((200, 2))
    y = rng.standard_normal((150, 2))
    assert energy_distance(x, x) == pytest.approx(0.0, abs=1e-9)
    assert energy_distance(x, y) == pytest.approx(energy_distance(y, x))
    assert energy_distance(x, y + 3.0) > energy_distance(x, y) > -1e-9
    assert energy_distance(x, y, chunk=7) == pytest.approx(energy_distance(x, y))
    with pytest.raises(InvalidArgumentError):
        energy_distance(x, np.zeros((3, 3)))
    with pytest.raises(InvalidArgumentError):
        energy_distance(np.empty((0, 2)), y)


def test_energy_distance_of_two_points() -> None:
    assert energy_distance(np.zeros((1, 1)), np.ones((1, 1))) == pytest.approx(2.0)


def test_psnr() -> None:
    ref = np.zeros((4, 4))
    assert psnr(ref, ref) == 99.0
    assert psnr(ref + 0.1, ref) == pytest.approx(10.0 * math.log10(4.0 / 0.01))
    with pytest.raises(InvalidArgumentError):
        psnr(ref, np.zeros(3))


def test_ssim(rng: Rng) -> None:
    image = rng.uniform(-1, 1, size=64)
    image -= image.mean()
    assert ssim(image, image) == pytest.approx(1.0)
    assert ssim(-image, image) < 0
    assert ssim(image + 0.5, image) < ssim(image + 0.1, image) < 1.0
    assert ssim(image + 0.1 * rng.standard_normal(64), image) < 1.0


@pytest.mark.parametrize('family', ['blobs', 'gradients', 'checkerboards'])
@pytest.mark.parametrize('channels', [1, 3])
def test_toy_images(family: ImageFamily, channels: int) -> None:
    spec = ToyImageSpec(size=8, channels=channels, family=family)
    images = make_toy_images(spec, 5)
    assert images.shape == (5, 64 * channels)
    assert images.min() >= -1.0
    assert images.max() <= 1.0
    np.testing.assert_array_equal(images, make_toy_images(spec, 5))
    other = ToyImageSpec(size=8, channels=channels, family=family, seed=1)
    assert not np.array_equal(images, make_toy_images(other, 5))


def test_fine_checkerboards_alternate() -> None:
    spec = ToyImageSpec(size=8, family='checkerboards', cell_sizes=(1,))
    image = make_toy_images(spec, 1).reshape(8, 8)
    assert np.all(image[:, 1:] != image[:, :-1])
    assert np.all(image[1:, :] != image[:-1, :])
    np.testing.assert_array_equal(image[2:, 2:], image[:-2, :-2])


def test_toy_image_spec_checks() -> None:
    with pytest.raises(InvalidArgumentError):
        ToyImageSpec(size=12)
    with pytest.raises(InvalidArgumentError):
        ToyImageSpec(channels=2)
    with pytest.raises(InvalidArgumentError):
        ToyImageSpec(family='stripes')  # pyright: ignore[reportArgumentType]
    with pytest.raises(InvalidArgumentError):
        make_toy_images(ToyImageSpec(), 0)


def test_load_dataset() -> None:
    points = load_dataset({'kind': 'gmm8', 'size': 10, 'seed': 2})
    assert points.shape == (10, 2)
    again = load_dataset({'kind': 'gmm8', 'size': 10, 'seed': 2})
    np.testing.assert_array_equal(points, again)
    images = load_dataset(
        {'kind': 'toy-images', 'size': 3, 'image_size': 8, 'channels': 3},
    )
    assert images.shape == (3, 192)
    assert dataset_shape({'kind': 'gmm8', 'size': 1}) == [2]
    toy_shape = dataset_shape({'kind': 'toy-images', 'size': 1, 'image_size': 8})
    assert toy_shape == [8, 8, 1]
    with pytest.raises(InvalidArgumentError):
        load_dataset(cast('DatasetConfig', {'kind': 'mnist', 'size': 1}))


def test_sample_files(tmp_path: Path, rng: Rng) -> None:
    points = rng.standard_normal((5, 2))
    write_points_csv(tmp_path / 'points.csv', points)
    assert (tmp_path / 'points.csv').read_text().startswith('x0,x1')
    np.testing.assert_allclose(read_points_csv(tmp_path / 'points.csv'), points)
    images = make_toy_images(ToyImageSpec(size=8), 2)
    write_images_json(tmp_path / 'images.json', images, (8, 8, 1))
    loaded, shape = read_images_json(tmp_path / 'images.json')
    assert shape == (8, 8, 1)
    np.testing.assert_allclose(loaded, images)
    np.testing.assert_allclose(read_samples(tmp_path / 'images.json'), images)
    (tmp_path / 'broken.json').write_text('{"shape": [2]}')
    with pytest.raises(ArtifactIOError):
        read_images_json(tmp_path / 'broken.json')


def test_png_output(tmp_path: Path, rng: Rng) -> None:
    pytest.importorskip('png')
    images = make_toy_images(ToyImageSpec(size=8, channels=3), 10)
    write_image_grid(tmp_path / 'grid.png', images, (8, 8, 3))
    write_scatter_png(tmp_path / 'scatter.png', rng.standard_normal((100, 2)))
    for name in ('grid.png', 'scatter.png'):
        assert (tmp_path / name).read_bytes()[:8] == b'\x89PNG\r\n\x1a\n'
