"""End-to-end runs on the 2-D mixture and on toy images.

These take minutes each; run them with `--run-slow` or `RGM_RUN_SLOW=1`.
"""

# ruff: noqa: D103
from __future__ import annotations

import json
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest

from restoration_gm.config import resolve_train_config
from restoration_gm.degradation import build_schedule, latent_sample
from restoration_gm.evaldata import (
    GMM8Spec,
    ToyImageSpec,
    energy_distance,
    make_toy_images,
    mode_coverage,
    psnr,
    sample_gmm8,
)
from restoration_gm.inverse import (
    baseline_reconstruct,
    image_metrics,
    make_denoise,
    make_sr,
    solve,
)
from restoration_gm.neural import generator_apply
from restoration_gm.numerics import make_rng
from restoration_gm.sampling import generate
from restoration_gm.training import train

if TYPE_CHECKING:
    from restoration_gm.checkpoint import Checkpoint

pytestmark = pytest.mark.slow

SAMPLE_COUNT = 10_000
SPEC = GMM8Spec()
_trained: dict[str, Checkpoint] = {}


def _mixture_model(**overrides: Any) -> Checkpoint:  # noqa: ANN401
    key = json.dumps(overrides, sort_keys=True)
    if key not in _trained:
        document: dict[str, Any] = {
            'schedule': {'kind': 'd', 'steps': 4, 'data_shape': [2]},
            'algorithm': 'relaxed',
            'prior': {'kind': 'kld'},
            'seed': 0,
        }
        document.update(overrides)
        config = resolve_train_config(document)
        record = train(config, sample_gmm8(100_000, SPEC, make_rng(100)))
        assert record.final is not None
        _trained[key] = record.final
    return _trained[key]


def _samples(checkpoint: Checkpoint, z_mode: str = 'gaussian') -> np.ndarray:
    schedule = build_schedule('d', 4, (2,))
    return generate(
        checkpoint.generator,
        schedule,
        SAMPLE_COUNT,
        make_rng(1),
        z_mode=z_mode,  # pyright: ignore[reportArgumentType]
    ).samples


def _held_out() -> np.ndarray:
    return sample_gmm8(SAMPLE_COUNT, SPEC, make_rng(2))


def _noise_floor() -> float:
    return energy_distance(_held_out(), sample_gmm8(SAMPLE_COUNT, SPEC, make_rng(3)))


def _kld_energy() -> float:
    return energy_distance(_samples(_mixture_model()), _held_out())


def test_discriminator_prior_recovers_every_mode() -> None:
    samples = _samples(_mixture_model())
    assert mode_coverage(samples, SPEC).covered == 8
    assert energy_distance(samples, _held_out()) <= 3.0 * _noise_floor()


def test_mmse_restorer_connects_the_modes() -> None:
    model = _mixture_model(algorithm='mmse')
    samples = _samples(model)
    assert energy_distance(samples, _held_out()) > _kld_energy()
    schedule = build_schedule('d', 4, (2,))
    latent = latent_sample(schedule, make_rng(4), SAMPLE_COUNT)
    single_step = generator_apply(model.generator, latent, 4, None, schedule)
    assert mode_coverage(single_step, SPEC).covered <= 7


@pytest.mark.parametrize(('prior', 'factor'), [('mmd', 5.0), ('dswd', 3.0)])
def test_kernel_and_sliced_priors_recover_every_mode(prior: str, factor: float) -> None:
    samples = _samples(_mixture_model(prior={'kind': prior}))
    assert mode_coverage(samples, SPEC).covered == 8
    assert energy_distance(samples, _held_out()) <= factor * _noise_floor()


def test_ablations_are_worse() -> None:
    reference = _kld_energy()
    no_fidelity = _samples(_mixture_model(lambda_='inf'))
    assert energy_distance(no_fidelity, _held_out()) > reference
    no_z = _samples(_mixture_model(z_mode='zero'), z_mode='zero')
    assert energy_distance(no_z, _held_out()) > reference


def test_runs_are_bit_identical() -> None:
    document = {
        'schedule': {'kind': 'd', 'steps': 4, 'data_shape': [2]},
        'iterations': 200,
        'seed': 5,
    }
    data = sample_gmm8(10_000, SPEC, make_rng(6))
    first = train(resolve_train_config(document), data)
    second = train(resolve_train_config(document), data)
    assert first.metrics == second.metrics
    assert first.final is not None
    assert second.final is not None
    np.testing.assert_array_equal(
        first.final.generator.params.flatten(),
        second.final.generator.params.flatten(),
    )


def test_restoration_prior_solves_inverse_problems() -> None:
    spec = ToyImageSpec(size=16, channels=1, family='blobs')
    shape = spec.shape
    config = resolve_train_config(
        {
            'schedule': {'kind': 'd', 'steps': 4, 'data_shape': list(shape)},
            'iterations': 30_000,
            'batch_size': 64,
            'hidden': 256,
            'dataset': {'kind': 'toy-images', 'size': 5000, 'image_size': 16},
        },
    )
    record = train(config, make_toy_images(spec, 5000))
    assert record.final is not None
    generator = record.final.generator
    schedule = build_schedule('d', 4, shape)
    truth = make_toy_images(ToyImageSpec(size=16, family='blobs', seed=1), 50)

    denoise = make_denoise(truth, shape, make_rng(7))
    restored = solve(denoise, generator, schedule, None, make_rng(8)).reconstruction
    pairs = zip(denoise.observation, truth, strict=True)
    noisy_psnr = np.mean([psnr(y, x) for y, x in pairs])
    assert image_metrics(denoise, restored)[0] >= noisy_psnr + 3.0

    sr = make_sr(truth, shape, make_rng(9))
    restored = solve(sr, generator, schedule, None, make_rng(10)).reconstruction
    baseline_psnr, _ = image_metrics(sr, baseline_reconstruct(sr))
    assert image_metrics(sr, restored)[0] > baseline_psnr
