"""Training procedures of restoration-based generative models.

Every iteration samples a batch of data points with one step index `k` each,
groups the batch by `k` (degraded spaces of different steps may differ in
width) and weights each group by its share of the batch. It then takes one
prior (discriminator) update followed by one generator update; the generator
loss reads the updated prior.

`algorithm` selects the generator loss:

- `relaxed`: re-degrade the restoration to step `k - 1` and regularize it
  there, with the full fidelity `1/lambda * f_k(x_hat, y_k)`.
- `posterior`: draw `y_{k-1}` from the Gaussian posterior given `(y_k, x_hat)`
  and use the one-step transition fidelity instead.
- `direct`: regularize the restoration itself against clean data.
- `mmse`: plain mean squared error regression without `z`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Any, NamedTuple

import numpy as np

from restoration_gm.checkpoint import Checkpoint, require_schedule, save_checkpoint
from restoration_gm.constants import RUN_RECORD_VERSION
from restoration_gm.degradation import (
    apply_A_adjoint,
    fidelity_full,
    fidelity_transition,
    forward_noise_apply,
    is_decomposable,
    posterior_coefficients,
    posterior_noise_apply,
    schedule_from_descriptor,
)
from restoration_gm.errors import (
    InvalidArgumentError,
    InvalidStateError,
    NumericalFailureError,
    UnsupportedScheduleError,
)
from restoration_gm.evaldata import energy_distance
from restoration_gm.logger import logger
from restoration_gm.neural import (
    Generator,
    GeneratorConfig,
    generator_forward,
    init_params,
    mlp_backward,
)
from restoration_gm.numerics import (
    AdamState,
    adam_step,
    make_rng,
    restore_rng,
    rng_state,
    split_rng,
)
from restoration_gm.priors import PriorBatch, make_prior
from restoration_gm.sampling import generate
from restoration_gm.utils import (
    artifact_metadata,
    group_by_step,
    write_csv,
    write_json,
    write_sidecar,
)

if TYPE_CHECKING:
    from pathlib import Path

    from numpy.typing import NDArray

    from restoration_gm.config import Algorithm, ResolvedTrainConfig
    from restoration_gm.degradation import DegradationSchedule
    from restoration_gm.neural import MLPParams, Tape
    from restoration_gm.numerics import Rng
    from restoration_gm.priors import Prior

EVAL_COUNT = 512
METRIC_COLUMNS = ('iteration', 'loss_g', 'loss_prior', 'fidelity', 'energy')


@dataclass(frozen=True)
class TrainState:
    """Parameters and optimizer moments of everything that learns."""

    generator: Generator
    generator_optimizer: AdamState
    prior: Prior | None
    iteration: int = 0


class StepLosses(NamedTuple):
    """Scalars reported by one training step."""

    loss_g: float
    loss_prior: float
    fidelity: float


@dataclass(frozen=True)
class StepGroup:
    """Data and noise of the examples that share one step index.

    The real batch of the prior is derived from `previous_noise`; `fake_noise`
    perturbs the re-degraded restoration.
    """

    k: int
    x: NDArray[np.float64]
    y_k: NDArray[np.float64]
    previous_noise: NDArray[np.float64]
    z: NDArray[np.float64] | None
    fake_noise: NDArray[np.float64]
    weight: float


def draw_groups(  # noqa: PLR0913
    schedule: DegradationSchedule,
    batch: NDArray[np.float64],
    k_batch: NDArray[np.int64],
    z_dim: int,
    rng: Rng,
    *,
    zero_z: bool = False,
) -> list[StepGroup]:
    """Draw the noise of one step, group by group in ascending `k`.

    Every algorithm draws the same values in the same order, so one seed gives
    comparable steps across algorithms.
    """
    if batch.ndim != 2 or batch.shape[0] != k_batch.shape[0]:  # noqa: PLR2004
        msg = f'batch {batch.shape} and steps {k_batch.shape} do not match'
        raise InvalidArgumentError(msg)
    if not batch.shape[0]:
        msg = 'a training batch must be nonempty'
        raise InvalidArgumentError(msg)
    schedule.check_dim(0, batch, 'batch')
    total = batch.shape[0]
    groups = []
    for k, indices in group_by_step(k_batch).items():
        if not 1 <= k <= schedule.total_steps:
            msg = f'step indices must lie in [1, {schedule.total_steps}], got {k}'
            raise InvalidArgumentError(msg)
        x = batch[indices]
        count = x.shape[0]
        y_k = forward_noise_apply(
            schedule.step(k),
            x,
            rng.standard_normal((count, schedule.dim(k))),
        )
        previous_noise = rng.standard_normal((count, schedule.dim(k - 1)))
        z = rng.standard_normal((count, z_dim)) if z_dim else None
        if z is not None and zero_z:
            z = np.zeros_like(z)
        fake_noise = rng.standard_normal((count, schedule.dim(k - 1)))
        groups.append(
            StepGroup(
                k=k,
                x=x,
                y_k=y_k,
                previous_noise=previous_noise,
                z=z,
                fake_noise=fake_noise,
                weight=count / total,
            ),
        )
    return groups


@dataclass(frozen=True)
class _Restoration:
    group: StepGroup
    x_hat: NDArray[np.float64]
    tape: Tape
    prior_k: int
    real: NDArray[np.float64]
    fake: NDArray[np.float64]


def _restore(
    generator: Generator,
    schedule: DegradationSchedule,
    group: StepGroup,
    algorithm: Algorithm,
) -> _Restoration:
    x_hat, tape = generator_forward(generator, group.y_k, group.k, group.z, schedule)
    previous = schedule.step(group.k - 1)
    if algorithm in ('direct', 'mmse'):
        return _Restoration(group, x_hat, tape, 0, group.x, x_hat)
    real = forward_noise_apply(previous, group.x, group.previous_noise)
    if algorithm == 'posterior':
        fake = posterior_noise_apply(
            schedule,
            group.k,
            group.y_k,
            x_hat,
            group.fake_noise,
        )
    else:
        fake = forward_noise_apply(previous, x_hat, group.fake_noise)
    return _Restoration(group, x_hat, tape, group.k - 1, real, fake)


class _GroupLoss(NamedTuple):
    value: float
    prior: float
    fidelity: float
    x_hat_grad: NDArray[np.float64]


def _group_loss(
    restoration: _Restoration,
    prior: Prior | None,
    schedule: DegradationSchedule,
    config: ResolvedTrainConfig,
) -> _GroupLoss:
    group = restoration.group
    x_hat = restoration.x_hat
    algorithm = config.algorithm
    if algorithm == 'mmse':
        residual = x_hat - group.x
        count = residual.shape[0]
        value = float(np.sum(residual * residual)) / count
        return _GroupLoss(value, 0.0, value, 2.0 * residual / count)
    if prior is None:
        msg = f'the {algorithm} algorithm needs a prior'
        raise InvalidStateError(msg)

    prior_value, fake_grad = prior.generator_term(
        restoration.fake,
        restoration.real,
        restoration.prior_k,
        schedule,
    )
    weight = config.fidelity_weight
    if algorithm == 'posterior':
        fidelity, fidelity_grad = fidelity_transition(
            schedule,
            group.k,
            restoration.fake,
            group.y_k,
        )
        x_weight = posterior_coefficients(schedule, group.k).x_weight
        x_hat_grad = x_weight * apply_A_adjoint(
            schedule.step(group.k - 1),
            fake_grad + weight * fidelity_grad,
        )
    else:
        fidelity, fidelity_grad = fidelity_full(schedule, group.k, x_hat, group.y_k)
        if algorithm == 'direct':
            prior_grad = fake_grad
        else:
            prior_grad = apply_A_adjoint(schedule.step(group.k - 1), fake_grad)
        x_hat_grad = prior_grad + weight * fidelity_grad
    return _GroupLoss(
        prior_value + weight * fidelity,
        prior_value,
        fidelity,
        x_hat_grad,
    )


class GeneratorObjective(NamedTuple):
    """Group-weighted generator loss and its parameter gradient."""

    value: float
    grads: MLPParams
    prior: float
    fidelity: float


def _objective(
    generator: Generator,
    prior: Prior | None,
    schedule: DegradationSchedule,
    restorations: list[_Restoration],
    config: ResolvedTrainConfig,
) -> GeneratorObjective:
    grads = generator.params.zeros_like()
    value = prior_total = fidelity_total = 0.0
    for restoration in restorations:
        loss = _group_loss(restoration, prior, schedule, config)
        weight = restoration.group.weight
        group_grads, _ = mlp_backward(restoration.tape, weight * loss.x_hat_grad)
        grads = grads.plus(group_grads)
        value += weight * loss.value
        prior_total += weight * loss.prior
        fidelity_total += weight * loss.fidelity
    return GeneratorObjective(value, grads, prior_total, fidelity_total)


def generator_objective(
    generator: Generator,
    prior: Prior | None,
    schedule: DegradationSchedule,
    groups: list[StepGroup],
    config: ResolvedTrainConfig,
) -> GeneratorObjective:
    """Generator loss for fixed groups and a frozen prior.

    Deterministic in its arguments, so finite differences of `value` w.r.t. the
    generator parameters reproduce `grads`.
    """
    restorations = [
        _restore(generator, schedule, group, config.algorithm) for group in groups
    ]
    return _objective(generator, prior, schedule, restorations, config)


def train_step(  # noqa: PLR0913
    state: TrainState,
    schedule: DegradationSchedule,
    batch: NDArray[np.float64],
    k_batch: NDArray[np.int64],
    config: ResolvedTrainConfig,
    rng: Rng,
) -> tuple[TrainState, StepLosses]:
    """One prior update then one generator update with the configured algorithm."""
    if config.algorithm == 'posterior' and not is_decomposable(schedule):
        msg = f'posterior training needs a decomposable schedule, not {schedule.kind}'
        raise UnsupportedScheduleError(msg)
    groups = draw_groups(
        schedule,
        batch,
        k_batch,
        state.generator.config.z_dim,
        rng,
        zero_z=config.z_mode == 'zero',
    )
    restorations = [
        _restore(state.generator, schedule, group, config.algorithm)
        for group in groups
    ]

    prior = state.prior
    loss_prior = 0.0
    if config.algorithm != 'mmse':
        if prior is None:
            msg = f'the {config.algorithm} algorithm needs a prior'
            raise InvalidStateError(msg)
        prior, loss_prior = prior.update(
            [
                PriorBatch(
                    k=r.prior_k,
                    real=r.real,
                    fake=r.fake,
                    weight=r.group.weight,
                )
                for r in restorations
            ],
            schedule,
            rng,
        )

    objective = _objective(state.generator, prior, schedule, restorations, config)
    tensors, optimizer = adam_step(
        state.generator.params.tensors(),
        objective.grads.tensors(),
        state.generator_optimizer,
    )
    generator = replace(
        state.generator,
        params=state.generator.params.with_tensors(tensors),
    )
    return (
        TrainState(
            generator=generator,
            generator_optimizer=optimizer,
            prior=prior,
            iteration=state.iteration + 1,
        ),
        StepLosses(objective.value, loss_prior, objective.fidelity),
    )


def _with_algorithm(
    config: ResolvedTrainConfig,
    algorithm: Algorithm,
) -> ResolvedTrainConfig:
    return config if config.algorithm == algorithm else replace(
        config,
        algorithm=algorithm,
    )


def train_step_relaxed(  # noqa: PLR0913
    state: TrainState,
    schedule: DegradationSchedule,
    batch: NDArray[np.float64],
    k_batch: NDArray[np.int64],
    config: ResolvedTrainConfig,
    rng: Rng,
) -> tuple[TrainState, StepLosses]:
    """Prior on the re-degraded restoration at `k - 1`, full fidelity at `k`."""
    return train_step(
        state,
        schedule,
        batch,
        k_batch,
        _with_algorithm(config, 'relaxed'),
        rng,
    )


def train_step_posterior(  # noqa: PLR0913
    state: TrainState,
    schedule: DegradationSchedule,
    batch: NDArray[np.float64],
    k_batch: NDArray[np.int64],
    config: ResolvedTrainConfig,
    rng: Rng,
) -> tuple[TrainState, StepLosses]:
    """Prior on a posterior draw of `y_{k-1}`, transition fidelity."""
    return train_step(
        state,
        schedule,
        batch,
        k_batch,
        _with_algorithm(config, 'posterior'),
        rng,
    )


def train_step_direct(  # noqa: PLR0913
    state: TrainState,
    schedule: DegradationSchedule,
    batch: NDArray[np.float64],
    k_batch: NDArray[np.int64],
    config: ResolvedTrainConfig,
    rng: Rng,
) -> tuple[TrainState, StepLosses]:
    """Prior compares restorations with clean data at step 0."""
    return train_step(
        state,
        schedule,
        batch,
        k_batch,
        _with_algorithm(config, 'direct'),
        rng,
    )


def train_step_mmse(  # noqa: PLR0913
    state: TrainState,
    schedule: DegradationSchedule,
    batch: NDArray[np.float64],
    k_batch: NDArray[np.int64],
    config: ResolvedTrainConfig,
    rng: Rng,
) -> tuple[TrainState, StepLosses]:
    """Squared-error regression of the clean point."""
    return train_step(
        state,
        schedule,
        batch,
        k_batch,
        _with_algorithm(config, 'mmse'),
        rng,
    )


def make_generator(
    config: ResolvedTrainConfig,
    schedule: DegradationSchedule,
    rng: Rng,
) -> Generator:
    """Fresh generator sized for `schedule`; MMSE restorers take no `z`."""
    generator_config = GeneratorConfig(
        data_dim=schedule.data_dim,
        z_dim=0 if config.algorithm == 'mmse' else config.z_dim,
        steps=schedule.total_steps,
        hidden=config.hidden,
        depth=config.depth,
        step_encoding=config.step_encoding,
    )
    return Generator(params=init_params(generator_config, rng), config=generator_config)


def init_state(
    config: ResolvedTrainConfig,
    schedule: DegradationSchedule,
    rng: Rng,
) -> TrainState:
    """Initial parameters and optimizer states."""
    generator = make_generator(config, schedule, rng)
    return TrainState(
        generator=generator,
        generator_optimizer=AdamState.zeros_like(
            generator.params.tensors(),
            lr=config.lr_g,
        ),
        prior=None if config.algorithm == 'mmse' else make_prior(config, schedule, rng),
    )


@dataclass
class RunRecord:
    """Configuration snapshot and the metrics logged along a run.

    `metrics` only grows; `final` holds the last checkpoint and is not serialized.
    """

    config: dict[str, Any]
    config_hash: str
    seed: int
    status: str = 'running'
    metrics: list[dict[str, float]] = field(default_factory=list)
    checkpoint: str | None = None
    diagnostic: dict[str, Any] | None = None
    final: Checkpoint | None = field(default=None, repr=False)

    def log(self: RunRecord, row: dict[str, float]) -> None:
        """Append one log point."""
        self.metrics.append(dict(row))

    def to_document(self: RunRecord) -> dict[str, Any]:
        """The JSON document of the run."""
        return {
            'version': RUN_RECORD_VERSION,
            'config': self.config,
            'config_hash': self.config_hash,
            'seed': self.seed,
            'status': self.status,
            'metrics': self.metrics,
            'checkpoint': self.checkpoint,
            'diagnostic': self.diagnostic,
        }


def _checkpoint(
    state: TrainState,
    schedule: DegradationSchedule,
    config: ResolvedTrainConfig,
    rng: Rng,
) -> Checkpoint:
    return Checkpoint(
        schedule=schedule.descriptor(),
        generator=state.generator,
        algorithm=config.algorithm,
        iteration=state.iteration,
        seed=config.seed,
        prior=state.prior,
        generator_optimizer=state.generator_optimizer,
        rng_state=rng_state(rng),
        config=config.to_document(),
    )


def _state_from_checkpoint(
    checkpoint: Checkpoint,
    config: ResolvedTrainConfig,
    schedule: DegradationSchedule,
) -> TrainState:
    require_schedule(checkpoint, schedule.descriptor())
    if checkpoint.algorithm != config.algorithm:
        msg = (
            f'checkpoint was trained with {checkpoint.algorithm}, the configuration '
            f'asks for {config.algorithm}'
        )
        raise InvalidStateError(msg)
    if checkpoint.generator_optimizer is None or checkpoint.rng_state is None:
        msg = 'checkpoint carries no optimizer or random state to resume from'
        raise InvalidStateError(msg)
    return TrainState(
        generator=checkpoint.generator,
        generator_optimizer=checkpoint.generator_optimizer,
        prior=checkpoint.prior,
        iteration=checkpoint.iteration,
    )


def _evaluate(
    state: TrainState,
    schedule: DegradationSchedule,
    dataset: NDArray[np.float64],
    config: ResolvedTrainConfig,
) -> float:
    """Energy distance of fresh samples to the data, on its own random stream."""
    rng = make_rng([config.seed, state.iteration])
    count = min(EVAL_COUNT, dataset.shape[0])
    samples = generate(
        state.generator,
        schedule,
        count,
        rng,
        z_mode=config.z_mode,
    ).samples
    reference = dataset[rng.choice(dataset.shape[0], size=count, replace=False)]
    return energy_distance(samples, reference)


def _emit(
    out_dir: Path | None,
    record: RunRecord,
    checkpoint: Checkpoint,
) -> None:
    if out_dir is None:
        return
    metadata = artifact_metadata(record.config_hash, record.seed, 'train')
    checkpoint_path = out_dir / 'checkpoint.json'
    save_checkpoint(checkpoint, checkpoint_path)
    write_sidecar(checkpoint_path, metadata)
    record.checkpoint = str(checkpoint_path)
    run_path = out_dir / 'run.json'
    write_json(run_path, record.to_document())
    write_sidecar(run_path, metadata)
    metrics_path = out_dir / 'metrics.csv'
    write_csv(
        metrics_path,
        METRIC_COLUMNS,
        [[row[column] for column in METRIC_COLUMNS] for row in record.metrics],
    )
    write_sidecar(metrics_path, metadata)


def train(
    config: ResolvedTrainConfig,
    dataset: NDArray[np.float64],
    *,
    resume: Checkpoint | None = None,
    out_dir: Path | None = None,
) -> RunRecord:
    """Run `config.iterations` training steps and return the run record.

    A resumed run continues the random stream saved in the checkpoint, so splitting
    a run in two reproduces it bit for bit. A non-finite loss stops the run: the
    record is written with status `aborted` before `NumericalFailureError` is
    raised.
    """
    schedule = schedule_from_descriptor(config.schedule)
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 2 or not data.shape[0]:  # noqa: PLR2004
        msg = f'the dataset must be a nonempty 2-D array, got shape {data.shape}'
        raise InvalidArgumentError(msg)
    schedule.check_dim(0, data, 'dataset')
    if config.algorithm == 'posterior' and not is_decomposable(schedule):
        msg = f'posterior training needs a decomposable schedule, not {schedule.kind}'
        raise UnsupportedScheduleError(msg)

    init_rng, rng = split_rng(make_rng(config.seed), 2)
    if resume is None:
        state = init_state(config, schedule, init_rng)
    else:
        state = _state_from_checkpoint(resume, config, schedule)
        rng = restore_rng(dict(resume.rng_state or {}))
        logger.info('resuming at iteration %d', state.iteration)

    record = RunRecord(
        config=config.to_document(),
        config_hash=config.digest(),
        seed=config.seed,
    )
    logger.info(
        'training %s/%s on %s T=%d for %d iterations',
        config.algorithm,
        config.prior.kind,
        schedule.kind,
        schedule.total_steps,
        config.iterations,
    )
    while state.iteration < config.iterations:
        indices = rng.integers(0, data.shape[0], size=config.batch_size)
        k_batch = rng.integers(1, schedule.total_steps + 1, size=config.batch_size)
        previous = state
        try:
            state, losses = train_step(
                state,
                schedule,
                data[indices],
                k_batch,
                config,
                rng,
            )
            if not all(math.isfinite(value) for value in losses):
                msg = f'non-finite loss at iteration {state.iteration}: {losses}'
                raise NumericalFailureError(msg)
            energy = (
                _evaluate(state, schedule, data, config)
                if state.iteration % config.log_every == 0
                or state.iteration == config.iterations
                else None
            )
        except NumericalFailureError as exception:
            record.status = 'aborted'
            record.diagnostic = {
                'iteration': previous.iteration + 1,
                'error': str(exception),
            }
            logger.error(  # noqa: TRY400
                'aborting at iteration %d: %s',
                previous.iteration + 1,
                exception,
            )
            _emit(out_dir, record, _checkpoint(previous, schedule, config, rng))
            raise
        if energy is not None:
            row = {
                'iteration': float(state.iteration),
                **losses._asdict(),
                'energy': energy,
            }
            record.log(row)
            logger.info(
                'iteration %d: loss_g=%.6g loss_prior=%.6g fidelity=%.6g energy=%.6g',
                state.iteration,
                losses.loss_g,
                losses.loss_prior,
                losses.fidelity,
                row['energy'],
            )

    record.status = 'completed'
    record.final = _checkpoint(state, schedule, config, rng)
    _emit(out_dir, record, record.final)
    return record


__all__ = (
    'METRIC_COLUMNS',
    'GeneratorObjective',
    'RunRecord',
    'StepGroup',
    'StepLosses',
    'TrainState',
    'draw_groups',
    'generator_objective',
    'init_state',
    'make_generator',
    'train',
    'train_step',
    'train_step_direct',
    'train_step_mmse',
    'train_step_posterior',
    'train_step_relaxed',
)
