"""Inverse tasks, the fidelity proximal operator and the restoration solver."""

# ruff: noqa: D103
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from restoration_gm import inverse
from restoration_gm.degradation import build_schedule
from restoration_gm.errors import InvalidArgumentError
from restoration_gm.evaldata import ToyImageSpec, make_toy_images
from restoration_gm.inverse import (
    DEFAULT_SOLVER_CONFIGS,
    InverseTask,
    SolverConfig,
    baseline_reconstruct,
    image_metrics,
    make_colorize,
    make_denoise,
    make_sr,
    prox_fidelity,
    solve,
)
from restoration_gm.neural import Generator, GeneratorConfig, init_params

if TYPE_CHECKING:
    from restoration_gm.numerics import Rng

SHAPE = (8, 8, 3)


def _images(count: int = 3) -> np.ndarray:
    return make_toy_images(ToyImageSpec(size=8, channels=3, family='gradients'), count)


def _tasks(rng: Rng) -> list[InverseTask]:
    images = _images()
    return [
        make_denoise(images, SHAPE, rng),
        make_sr(images, SHAPE, rng),
        make_sr(images, SHAPE, rng, sigma=0.05),
        make_colorize(images, SHAPE, rng),
    ]


def _normal_equations(task: InverseTask, v: np.ndarray, lam: float) -> np.ndarray:
    weight = lam / task.sigma_obs**2 if task.sigma_obs > 0 else lam
    a = task.matrix
    system = np.eye(task.data_dim) + weight * a.T @ a
    right = v + weight * task.observation @ a
    return np.linalg.solve(system, right.T).T


def test_operators_and_widths(rng: Rng) -> None:
    denoise, sr, _, colorize = _tasks(rng)
    assert denoise.observation.shape == (3, 192)
    assert sr.observation.shape == (3, 48)
    assert colorize.observation.shape == (3, 64)
    assert sr.matrix.shape == (48, 192)
    np.testing.assert_allclose(sr.matrix @ _images()[0], sr.apply(_images()[0]))
    assert denoise.sigma_obs == pytest.approx(2 * 40 / 255)


def test_sr_factor_must_be_a_power_of_two(rng: Rng) -> None:
    with pytest.raises(InvalidArgumentError):
        make_sr(_images(), SHAPE, rng, factor=3)


def test_task_checks_its_observation() -> None:
    with pytest.raises(InvalidArgumentError):
        InverseTask(kind='colorize', shape=SHAPE, observation=np.zeros((2, 63)))
    with pytest.raises(InvalidArgumentError):
        InverseTask(
            kind='denoise',
            shape=SHAPE,
            observation=np.zeros((2, 192)),
            sigma_obs=-1.0,
        )


@pytest.mark.parametrize('index', range(4))
def test_prox_matches_the_normal_equations(rng: Rng, index: int) -> None:
    task = _tasks(rng)[index]
    v = rng.standard_normal((task.count, task.data_dim))
    for lam in (0.01, 0.2, 5.0):
        np.testing.assert_allclose(
            prox_fidelity(v, task, lam),
            _normal_equations(task, v, lam),
            rtol=1e-8,
            atol=1e-8,
        )


def test_prox_without_fidelity_is_identity(rng: Rng) -> None:
    task = _tasks(rng)[3]
    v = rng.standard_normal((task.count, task.data_dim))
    np.testing.assert_array_equal(prox_fidelity(v, task, 0.0), v)
    with pytest.raises(InvalidArgumentError):
        prox_fidelity(v, task, -1.0)
    with pytest.raises(InvalidArgumentError):
        prox_fidelity(v[:, :10], task, 1.0)


def test_prox_is_non_expansive(rng: Rng) -> None:
    for task in _tasks(rng):
        a = rng.standard_normal((task.count, task.data_dim))
        b = rng.standard_normal((task.count, task.data_dim))
        moved = np.linalg.norm(
            prox_fidelity(a, task, 2.0) - prox_fidelity(b, task, 2.0),
        )
        assert moved <= np.linalg.norm(a - b) + 1e-9


def test_colorize_residual_shrinks_with_lam(rng: Rng) -> None:
    task = _tasks(rng)[3]
    y = task.observation
    v = rng.standard_normal((task.count, task.data_dim))
    residuals = [
        float(np.linalg.norm(task.apply(prox_fidelity(v, task, lam)) - y))
        for lam in (0.1, 1.0, 10.0, 100.0)
    ]
    assert residuals == sorted(residuals, reverse=True)
    assert residuals[-1] < 0.05 * residuals[0]


def test_baselines(rng: Rng) -> None:
    images = _images()
    denoise, sr, _, colorize = _tasks(rng)
    np.testing.assert_allclose(baseline_reconstruct(denoise), denoise.observation)
    for task in (sr, colorize):
        baseline = baseline_reconstruct(task)
        np.testing.assert_allclose(task.apply(baseline), task.observation, atol=1e-10)
    upsampled = baseline_reconstruct(sr).reshape(3, 8, 8, 3)
    np.testing.assert_allclose(upsampled[:, 0, 0], upsampled[:, 1, 1], atol=1e-10)
    gray = baseline_reconstruct(colorize).reshape(3, 64, 3)
    np.testing.assert_allclose(gray[:, :, 0], gray[:, :, 2], atol=1e-10)
    np.testing.assert_allclose(
        gray[:, :, 0],
        images.reshape(3, 64, 3).mean(axis=2),
        atol=1e-10,
    )


def test_solver_config_ranges() -> None:
    with pytest.raises(InvalidArgumentError):
        SolverConfig(repeats=0, lam=1.0, alpha=0.5)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(repeats=1, lam=1.0, alpha=0.0)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(repeats=1, lam=-1.0, alpha=0.5)
    with pytest.raises(InvalidArgumentError):
        SolverConfig(repeats=1, lam=1.0, alpha=0.5, depth=0)
    assert DEFAULT_SOLVER_CONFIGS['colorize'].depth == 2


def _generator(steps: int, rng: Rng) -> Generator:
    config = GeneratorConfig(data_dim=192, z_dim=4, steps=steps, hidden=8, depth=2)
    return Generator(params=init_params(config, rng), config=config)


@pytest.mark.parametrize(('kind', 'steps'), [('d', 3), ('sr', 3)])
def test_solver_spends_repeats_times_depth_calls(
    rng: Rng,
    kind: str,
    steps: int,
) -> None:
    schedule = build_schedule(kind, steps, SHAPE)  # pyright: ignore[reportArgumentType]
    task = _tasks(rng)[3]
    seen: list[tuple[int, int]] = []
    config = SolverConfig(repeats=3, lam=1.0, alpha=0.5, depth=2)
    solution = solve(
        task,
        _generator(steps, rng),
        schedule,
        config,
        rng,
        callback=lambda repeat, i, _: seen.append((repeat, i)),
    )
    assert solution.nfe == 6
    assert seen == [(r, i) for r in range(3) for i in (2, 1)]
    assert solution.reconstruction.shape == (3, 192)
    assert np.all(np.isfinite(solution.reconstruction))


@pytest.mark.parametrize('kind', ['d', 'sr'])
def test_solver_restores_with_the_step_of_its_input(
    rng: Rng,
    monkeypatch: pytest.MonkeyPatch,
    kind: str,
) -> None:
    schedule = build_schedule(kind, 3, SHAPE)  # pyright: ignore[reportArgumentType]
    calls: list[tuple[int, int]] = []
    apply = inverse.generator_apply

    def recorded(*args: object, **kwargs: object) -> np.ndarray:
        y, k = args[1], args[2]
        calls.append((int(k), np.shape(y)[-1]))  # pyright: ignore[reportArgumentType]
        return apply(*args, **kwargs)  # pyright: ignore[reportArgumentType]

    monkeypatch.setattr(inverse, 'generator_apply', recorded)
    solve(
        _tasks(rng)[3],
        _generator(3, rng),
        schedule,
        SolverConfig(repeats=2, lam=1.0, alpha=0.5, depth=3),
        rng,
    )
    assert calls == [(i, schedule.dim(i)) for _ in range(2) for i in (3, 2, 1)]


def test_solver_uses_default_configs(rng: Rng) -> None:
    task = _tasks(rng)[0]
    solution = solve(task, _generator(2, rng), build_schedule('d', 2, SHAPE), None, rng)
    assert solution.nfe == DEFAULT_SOLVER_CONFIGS['denoise'].repeats


def test_solver_rejects_mismatches(rng: Rng) -> None:
    task = _tasks(rng)[3]
    with pytest.raises(InvalidArgumentError):
        solve(
            task,
            _generator(1, rng),
            build_schedule('d', 1, SHAPE),
            SolverConfig(repeats=1, lam=1.0, alpha=0.5, depth=2),
            rng,
        )
    with pytest.raises(InvalidArgumentError):
        solve(
            task,
            _generator(2, rng),
            build_schedule('d', 2, (2,)),
            SolverConfig(repeats=1, lam=1.0, alpha=0.5),
            rng,
        )


def test_image_metrics(rng: Rng) -> None:
    task = _tasks(rng)[1]
    assert task.ground_truth is not None
    psnr_value, ssim_value = image_metrics(task, task.ground_truth)
    assert psnr_value == 99.0
    assert ssim_value == pytest.approx(1.0)
    baseline_psnr, _ = image_metrics(task, baseline_reconstruct(task))
    assert baseline_psnr < 99.0
    bare = InverseTask(kind='denoise', shape=SHAPE, observation=task.ground_truth)
    with pytest.raises(InvalidArgumentError):
        image_metrics(bare, task.ground_truth)
