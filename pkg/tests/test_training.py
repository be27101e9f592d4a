"""Training steps, generator objectives and full runs."""

# ruff: noqa: D103
from __future__ import annotations

import json
from dataclasses import replace
from typing import TYPE_CHECKING, Any

import numpy as np
import pytest

from restoration_gm.checkpoint import load_checkpoint
from restoration_gm.config import resolve_train_config
from restoration_gm.degradation import build_schedule
from restoration_gm.errors import (
    InvalidArgumentError,
    InvalidStateError,
    NumericalFailureError,
    UnsupportedScheduleError,
)
from restoration_gm.evaldata import GMM8Spec, sample_gmm8
from restoration_gm.numerics import finite_diff_grad, make_rng
from restoration_gm.training import (
    METRIC_COLUMNS,
    draw_groups,
    generator_objective,
    init_state,
    train,
    train_step,
    train_step_direct,
    train_step_mmse,
    train_step_posterior,
    train_step_relaxed,
)

if TYPE_CHECKING:
    from pathlib import Path

    from restoration_gm.config import ResolvedTrainConfig
    from restoration_gm.numerics import Rng
    from restoration_gm_pytest.fixtures import ArraySnapshot


def _config(**overrides: Any) -> ResolvedTrainConfig:  # noqa: ANN401
    document: dict[str, Any] = {
        'schedule': {'kind': 'd', 'steps': 3, 'data_shape': [2]},
        'algorithm': 'relaxed',
        'prior': {'kind': 'kld'},
        'lambda_': 0.5,
        'batch_size': 16,
        'iterations': 4,
        'seed': 7,
        'hidden': 8,
        'depth': 2,
        'log_every': 2,
        'r1_gamma': 1.0,
    }
    document.update(overrides)
    return resolve_train_config(document)


def _data(count: int = 64) -> np.ndarray:
    return sample_gmm8(count, GMM8Spec(), make_rng(0))


def test_draw_groups_orders_and_weights(rng: Rng) -> None:
    schedule = build_schedule('d', 3, (2,))
    batch = rng.standard_normal((5, 2))
    groups = draw_groups(schedule, batch, np.array([3, 1, 3, 2, 3]), 2, rng)
    assert [group.k for group in groups] == [1, 2, 3]
    assert [group.weight for group in groups] == [0.2, 0.2, 0.6]
    np.testing.assert_array_equal(groups[2].x, batch[[0, 2, 4]])
    assert all(group.z is not None and group.z.shape[1] == 2 for group in groups)
    zero = draw_groups(schedule, batch, np.ones(5, dtype=np.int64), 2, rng, zero_z=True)
    assert zero[0].z is not None
    assert not np.any(zero[0].z)


def test_draw_groups_rejects_bad_steps(rng: Rng) -> None:
    schedule = build_schedule('d', 3, (2,))
    batch = rng.standard_normal((2, 2))
    with pytest.raises(InvalidArgumentError):
        draw_groups(schedule, batch, np.array([0, 1]), 2, rng)
    with pytest.raises(InvalidArgumentError):
        draw_groups(schedule, batch, np.array([4, 1]), 2, rng)
    with pytest.raises(InvalidArgumentError):
        draw_groups(schedule, batch, np.array([1]), 2, rng)


@pytest.mark.parametrize(
    ('algorithm', 'prior', 'kind'),
    [
        ('relaxed', 'kld', 'd'),
        ('relaxed', 'mmd', 'sr-naive'),
        ('posterior', 'kld', 'd'),
        ('posterior', 'mmd', 'd-quartic'),
        ('direct', 'kld', 'd'),
        ('mmse', 'kld', 'd'),
    ],
)
def test_generator_gradient_matches_finite_differences(
    algorithm: str,
    prior: str,
    kind: str,
) -> None:
    shape = [4, 4, 1] if kind == 'sr-naive' else [2]
    config = _config(
        algorithm=algorithm,
        prior={'kind': prior},
        schedule={'kind': kind, 'steps': 2, 'data_shape': shape},
    )
    schedule = build_schedule(kind, 2, shape)  # pyright: ignore[reportArgumentType]
    rng = make_rng(3)
    state = init_state(config, schedule, rng)
    batch = rng.standard_normal((6, schedule.data_dim))
    k_batch = np.array([1, 2, 2, 1, 2, 2])
    groups = draw_groups(
        schedule,
        batch,
        k_batch,
        state.generator.config.z_dim,
        rng,
    )
    generator = state.generator
    objective = generator_objective(generator, state.prior, schedule, groups, config)

    def value(vector: np.ndarray) -> float:
        candidate = replace(generator, params=generator.params.unflatten(vector))
        return generator_objective(
            candidate,
            state.prior,
            schedule,
            groups,
            config,
        ).value

    numeric = finite_diff_grad(value, generator.params.flatten())
    np.testing.assert_allclose(
        objective.grads.flatten(),
        numeric,
        rtol=1e-4,
        atol=1e-7,
    )


def test_mmse_generator_takes_no_z() -> None:
    config = _config(algorithm='mmse')
    state = init_state(config, build_schedule('d', 3, (2,)), make_rng(0))
    assert state.generator.config.z_dim == 0
    assert state.prior is None


def test_posterior_needs_a_decomposable_schedule(rng: Rng) -> None:
    config = _config(
        algorithm='posterior',
        schedule={'kind': 'sr-naive', 'steps': 2, 'data_shape': [4, 4, 1]},
    )
    schedule = build_schedule('sr-naive', 2, (4, 4, 1))
    state = init_state(config, schedule, rng)
    batch = rng.standard_normal((4, 16))
    with pytest.raises(UnsupportedScheduleError):
        train_step(state, schedule, batch, np.array([1, 2, 1, 2]), config, rng)
    with pytest.raises(UnsupportedScheduleError):
        train(config, rng.standard_normal((8, 16)))


@pytest.mark.parametrize(
    'step',
    [train_step_relaxed, train_step_posterior, train_step_direct, train_step_mmse],
)
def test_named_steps_advance_the_state(rng: Rng, step: Any) -> None:  # noqa: ANN401
    config = _config()
    schedule = build_schedule('d', 3, (2,))
    state = init_state(config, schedule, rng)
    if step is train_step_mmse:
        state = replace(state, prior=None)
    batch = rng.standard_normal((8, 2))
    k_batch = rng.integers(1, 4, size=8)
    new_state, losses = step(state, schedule, batch, k_batch, config, rng)
    assert new_state.iteration == 1
    assert new_state.generator_optimizer.t == 1
    assert all(np.isfinite(value) for value in losses)


def test_adversarial_step_needs_a_prior(rng: Rng) -> None:
    config = _config()
    schedule = build_schedule('d', 3, (2,))
    state = replace(init_state(config, schedule, rng), prior=None)
    batch = rng.standard_normal((4, 2))
    k_batch = np.ones(4, dtype=np.int64)
    with pytest.raises(InvalidStateError):
        train_step(state, schedule, batch, k_batch, config, rng)


@pytest.mark.parametrize('prior', ['kld', 'mmd', 'dswd'])
def test_training_is_deterministic(prior: str) -> None:
    config = _config(prior={'kind': prior, 'num_projections': 4, 'dsw_iterations': 1})
    first = train(config, _data()).final
    second = train(config, _data()).final
    assert first is not None
    assert second is not None
    np.testing.assert_array_equal(
        first.generator.params.flatten(),
        second.generator.params.flatten(),
    )


def test_split_run_reproduces_the_whole_run(
    tmp_path: Path,
    array_snapshot: ArraySnapshot,
) -> None:
    config = _config()
    whole = train(config, _data()).final
    train(replace(config, iterations=2), _data(), out_dir=tmp_path / 'half')
    resumed = train(
        config,
        _data(),
        resume=load_checkpoint(tmp_path / 'half' / 'checkpoint.json'),
    ).final
    assert whole is not None
    assert resumed is not None
    assert resumed.iteration == whole.iteration == 4
    np.testing.assert_array_equal(
        resumed.generator.params.flatten(),
        whole.generator.params.flatten(),
    )
    array_snapshot.take(whole.generator.params.flatten(), 'generator')


def test_resume_rejects_other_algorithm(tmp_path: Path) -> None:
    train(_config(iterations=1), _data(), out_dir=tmp_path)
    checkpoint = load_checkpoint(tmp_path / 'checkpoint.json')
    with pytest.raises(InvalidStateError):
        train(_config(algorithm='direct'), _data(), resume=checkpoint)


def test_run_writes_artifacts(tmp_path: Path) -> None:
    config = _config(iterations=3, log_every=2)
    record = train(config, _data(), out_dir=tmp_path)
    assert record.status == 'completed'
    assert [row['iteration'] for row in record.metrics] == [2.0, 3.0]
    for name in ('checkpoint.json', 'run.json', 'metrics.csv'):
        assert (tmp_path / name).exists()
        sidecar = json.loads((tmp_path / f'{name}.meta.json').read_text())
        assert sidecar['config_hash'] == config.digest()
        assert sidecar['seed'] == config.seed
        assert sidecar['command'] == 'train'
    header = (tmp_path / 'metrics.csv').read_text().splitlines()[0]
    assert header.split(',') == list(METRIC_COLUMNS)
    run = json.loads((tmp_path / 'run.json').read_text())
    assert run['status'] == 'completed'
    assert run['config_hash'] == config.digest()
    assert len(run['metrics']) == 2


def test_zero_iterations_keeps_the_initial_state() -> None:
    config = _config(iterations=0)
    record = train(config, _data())
    assert record.metrics == []
    assert record.final is not None
    assert record.final.iteration == 0


@pytest.mark.parametrize(
    ('algorithm', 'prior'),
    [
        ('mmse', 'kld'),
        ('relaxed', 'kld'),
        ('relaxed', 'mmd'),
        ('direct', 'kld'),
        ('posterior', 'kld'),
    ],
)
def test_non_finite_loss_aborts_the_run(
    tmp_path: Path,
    algorithm: str,
    prior: str,
) -> None:
    data = _data()
    data[:, 0] = np.nan
    config = _config(algorithm=algorithm, prior={'kind': prior})
    with pytest.raises(NumericalFailureError):
        train(config, data, out_dir=tmp_path)
    run = json.loads((tmp_path / 'run.json').read_text())
    assert run['status'] == 'aborted'
    assert run['diagnostic']['iteration'] == 1
    assert 'non-finite' in run['diagnostic']['error']
    checkpoint = load_checkpoint(tmp_path / 'checkpoint.json')
    assert checkpoint.iteration == 0


def test_runaway_learning_rate_aborts_the_run(tmp_path: Path) -> None:
    config = _config(algorithm='mmse', lr_g=1e300, iterations=50)
    with pytest.raises(NumericalFailureError):
        train(config, _data(), out_dir=tmp_path)
    run = json.loads((tmp_path / 'run.json').read_text())
    assert run['status'] == 'aborted'


def test_dataset_must_match_the_schedule() -> None:
    with pytest.raises(InvalidArgumentError):
        train(_config(), np.zeros((4, 3)))
    with pytest.raises(InvalidArgumentError):
        train(_config(), np.zeros((0, 2)))


@pytest.mark.parametrize('algorithm', ['direct', 'posterior'])
def test_first_step_matches_the_relaxed_step(algorithm: str) -> None:
    schedule = build_schedule('d', 3, (2,))
    assert schedule.step(0).sigma == 0.0
    relaxed = _config()
    other = _config(algorithm=algorithm)
    state = init_state(relaxed, schedule, make_rng(11))
    batch = make_rng(12).standard_normal((8, 2))
    k_batch = np.ones(8, dtype=np.int64)
    expected, expected_losses = train_step(
        state,
        schedule,
        batch,
        k_batch,
        relaxed,
        make_rng(13),
    )
    actual, actual_losses = train_step(
        state,
        schedule,
        batch,
        k_batch,
        other,
        make_rng(13),
    )
    np.testing.assert_allclose(actual_losses, expected_losses, rtol=1e-12)
    np.testing.assert_allclose(
        actual.generator.params.flatten(),
        expected.generator.params.flatten(),
        rtol=1e-12,
        atol=1e-15,
    )
