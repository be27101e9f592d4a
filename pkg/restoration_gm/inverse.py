"""Plug-and-play inverse problems with a trained restoration chain as prior.

Each solver step pushes the current estimate into the step-`i` degraded
distribution, restores it with the generator, damps the restoration and then takes
a Douglas-Rachford reflection through the proximal operator of the data fidelity.
The fidelity operator is small enough to be kept as a dense matrix, so the proximal
operator is solved exactly in the SVD basis of `A`.
"""

from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING, Literal, NamedTuple

import numpy as np

from restoration_gm.constants import DENOISE_SIGMA, PINV_TOL, SR_FACTOR
from restoration_gm.degradation import BlockAvgOp, forward_sample
from restoration_gm.errors import InvalidArgumentError, NumericalFailureError
from restoration_gm.evaldata import psnr, ssim
from restoration_gm.logger import logger
from restoration_gm.neural import generator_apply
from restoration_gm.numerics import ensure_finite, svd
from restoration_gm.sampling import draw_z
from restoration_gm.utils import as_batch, unbatch

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from restoration_gm.config import ZMode
    from restoration_gm.degradation import DegradationSchedule
    from restoration_gm.neural import Generator
    from restoration_gm.numerics import Rng

TaskKind = Literal['denoise', 'super_resolve', 'colorize']
TASK_KINDS: tuple[TaskKind, ...] = ('denoise', 'super_resolve', 'colorize')

Operator = Callable[[np.ndarray], np.ndarray]


def _operator(
    kind: TaskKind,
    shape: tuple[int, int, int],
    factor: int,
) -> tuple[Operator, int]:
    """The observation map on flat image rows and its output width."""
    height, width, channels = shape
    if kind == 'denoise':
        return (lambda x: np.array(x, dtype=np.float64, copy=True)), math.prod(shape)
    if kind == 'super_resolve':
        if factor < 1 or factor & (factor - 1):
            msg = f'the super-resolution factor must be a power of two, got {factor}'
            raise InvalidArgumentError(msg)
        average = BlockAvgOp(level=factor.bit_length() - 1, shape=shape)
        return average.apply, average.out_dim

    def gray(x: np.ndarray) -> np.ndarray:
        batch, was_vector = as_batch(x)
        means = batch.reshape(batch.shape[0], height * width, channels).mean(axis=2)
        return unbatch(means, was_vector)

    return gray, height * width


@dataclass(frozen=True, eq=False)
class InverseTask:
    """Observations `y = A x + sigma_obs n` of a batch of images.

    `observation` always holds one row per image. `sigma_obs = 0` marks a noiseless
    task whose fidelity is left unweighted.
    """

    kind: TaskKind
    shape: tuple[int, int, int]
    observation: NDArray[np.float64]
    sigma_obs: float = 0.0
    factor: int = 1
    ground_truth: NDArray[np.float64] | None = None

    def __post_init__(self: InverseTask) -> None:
        """Check the observation against the operator."""
        if self.kind not in TASK_KINDS:
            msg = f'unknown task {self.kind!r}, expected one of {TASK_KINDS}'
            raise InvalidArgumentError(msg)
        if self.sigma_obs < 0:
            msg = f'sigma_obs must be non-negative, got {self.sigma_obs}'
            raise InvalidArgumentError(msg)
        _, out_dim = _operator(self.kind, self.shape, self.factor)
        if self.observation.shape[1:] != (out_dim,):
            msg = (
                f'{self.kind} observations of {self.shape} images have width '
                f'{out_dim}, got shape {self.observation.shape}'
            )
            raise InvalidArgumentError(msg)
        if self.ground_truth is not None and self.ground_truth.shape != (
            self.observation.shape[0],
            self.data_dim,
        ):
            msg = f'ground truth has shape {self.ground_truth.shape}'
            raise InvalidArgumentError(msg)

    @property
    def data_dim(self: InverseTask) -> int:
        """Flat size of one image."""
        return math.prod(self.shape)

    @property
    def count(self: InverseTask) -> int:
        """Number of observed images."""
        return self.observation.shape[0]

    def apply(self: InverseTask, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """`A x` for flat images."""
        operator, _ = _operator(self.kind, self.shape, self.factor)
        return operator(x)

    @cached_property
    def matrix(self: InverseTask) -> NDArray[np.float64]:
        """Dense `A`, built column by column from the structured operator."""
        return self.apply(np.eye(self.data_dim)).T

    @cached_property
    def decomposition(
        self: InverseTask,
    ) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
        """Thin SVD of `A` restricted to its numerically nonzero singular values."""
        u, s, v = svd(self.matrix)
        keep = s > PINV_TOL * s[0]
        return u[:, keep], s[keep], v[:, keep]


def make_denoise(
    ground_truth: NDArray[np.float64],
    shape: tuple[int, int, int],
    rng: Rng,
    sigma: float = DENOISE_SIGMA,
) -> InverseTask:
    """`y = x + sigma n`."""
    return _make_task('denoise', ground_truth, shape, rng, sigma, 1)


def make_sr(
    ground_truth: NDArray[np.float64],
    shape: tuple[int, int, int],
    rng: Rng,
    factor: int = SR_FACTOR,
    sigma: float = 0.0,
) -> InverseTask:
    """`y` averages `factor x factor` blocks per channel."""
    return _make_task('super_resolve', ground_truth, shape, rng, sigma, factor)


def make_colorize(
    ground_truth: NDArray[np.float64],
    shape: tuple[int, int, int],
    rng: Rng,
    sigma: float = 0.0,
) -> InverseTask:
    """`y` averages the channels of every pixel."""
    return _make_task('colorize', ground_truth, shape, rng, sigma, 1)


def _make_task(  # noqa: PLR0913
    kind: TaskKind,
    ground_truth: NDArray[np.float64],
    shape: tuple[int, int, int],
    rng: Rng,
    sigma: float,
    factor: int,
) -> InverseTask:
    truth, _ = as_batch(np.asarray(ground_truth, dtype=np.float64))
    if truth.shape[1] != math.prod(shape):
        msg = f'images of shape {shape} are {math.prod(shape)} wide, got {truth.shape}'
        raise InvalidArgumentError(msg)
    operator, _ = _operator(kind, shape, factor)
    observation = operator(truth)
    if sigma > 0:
        observation = observation + sigma * rng.standard_normal(observation.shape)
    return InverseTask(
        kind=kind,
        shape=shape,
        observation=observation,
        sigma_obs=sigma,
        factor=factor,
        ground_truth=truth,
    )


def baseline_reconstruct(task: InverseTask) -> NDArray[np.float64]:
    """`A^+ y`: the observation itself, nearest-neighbour upsampling or gray copies."""
    u, s, v = task.decomposition
    return ((task.observation @ u) / s) @ v.T


def prox_fidelity(
    v: NDArray[np.float64],
    task: InverseTask,
    lam: float,
) -> NDArray[np.float64]:
    """`argmin_x 1/2 ||x - v||^2 + lam/2 sigma^-2 ||A x - y||^2`, row by row.

    Along singular direction `j` the minimizer is
    `(c_j + w s_j y_j) / (1 + w s_j^2)` with `w = lam sigma^-2`; components in the
    null space of `A` are kept.
    """
    if lam < 0:
        msg = f'lam must be non-negative, got {lam}'
        raise InvalidArgumentError(msg)
    batch, was_vector = as_batch(np.asarray(v, dtype=np.float64))
    if batch.shape != (task.count, task.data_dim):
        msg = f'v has shape {batch.shape}, expected {(task.count, task.data_dim)}'
        raise InvalidArgumentError(msg)
    if lam == 0:
        return unbatch(batch.copy(), was_vector)
    u, s, basis = task.decomposition
    weight = lam / task.sigma_obs**2 if task.sigma_obs > 0 else lam
    coefficients = batch @ basis
    observed = task.observation @ u
    solved = (coefficients + weight * s * observed) / (1.0 + weight * s * s)
    return unbatch(batch + (solved - coefficients) @ basis.T, was_vector)


@dataclass(frozen=True)
class SolverConfig:
    """Budget and step sizes of the solver.

    Attributes
    ----------
    repeats: `int`
        Outer repetitions `M`.
    lam: `float`
        Weight of the fidelity inside its proximal operator.
    alpha: `float`
        Damping of each restoration, in `(0, 1]`.
    depth: `int`
        Degradation steps `K` visited per repetition, from `K` down to 1.

    """

    repeats: int
    lam: float
    alpha: float
    depth: int = 1

    def __post_init__(self: SolverConfig) -> None:
        """Check the ranges."""
        if self.repeats < 1 or self.depth < 1:
            msg = f'repeats and depth must be positive: {self.repeats}, {self.depth}'
            raise InvalidArgumentError(msg)
        if not 0 < self.alpha <= 1:
            msg = f'alpha must lie in (0, 1], got {self.alpha}'
            raise InvalidArgumentError(msg)
        if self.lam < 0:
            msg = f'lam must be non-negative, got {self.lam}'
            raise InvalidArgumentError(msg)


DEFAULT_SOLVER_CONFIGS: dict[TaskKind, SolverConfig] = {
    'denoise': SolverConfig(repeats=10, lam=5.0, alpha=0.1),
    'super_resolve': SolverConfig(repeats=5, lam=0.2, alpha=0.2),
    'colorize': SolverConfig(repeats=20, lam=5.0, alpha=0.5, depth=2),
}


class Solution(NamedTuple):
    """Reconstructions and the number of generator calls spent on them."""

    reconstruction: NDArray[np.float64]
    nfe: int


def solve(  # noqa: PLR0913
    task: InverseTask,
    generator: Generator,
    schedule: DegradationSchedule,
    config: SolverConfig | None,
    rng: Rng,
    *,
    z_mode: ZMode = 'gaussian',
    callback: Callable[[int, int, NDArray[np.float64]], None] | None = None,
) -> Solution:
    """Reconstruct the images behind `task.observation`.

    Douglas-Rachford splitting with the generator in place of the prior's
    proximal step. Starts from `A^+ y` and spends exactly `repeats * depth`
    generator calls. Inner step `i` degrades the estimate to `y_hat ~ N(A_i x,
    Sigma_i)` and restores it with `G(y_hat, i, z)`, the label the generator was
    trained on for step-`i` inputs; the result stands in for `x_{i-1}`.
    `callback(repeat, i, x)` sees the estimate after each inner step.
    """
    config = config or DEFAULT_SOLVER_CONFIGS[task.kind]
    if schedule.data_dim != task.data_dim:
        msg = (
            f'the schedule models {schedule.data_dim}-dimensional data, the task '
            f'observes {task.data_dim}-dimensional images'
        )
        raise InvalidArgumentError(msg)
    if config.depth > schedule.total_steps:
        msg = f'depth {config.depth} exceeds the {schedule.total_steps} schedule steps'
        raise InvalidArgumentError(msg)

    x = baseline_reconstruct(task)
    nfe = 0
    for repeat in range(config.repeats):
        for i in range(config.depth, 0, -1):
            degraded = forward_sample(schedule.step(i), x, rng)
            z = draw_z(generator, task.count, rng, z_mode)
            restored = generator_apply(generator, degraded, i, z, schedule)
            nfe += 1
            restored = (1.0 - config.alpha) * x + config.alpha * restored
            delta = prox_fidelity(2.0 * restored - x, task, config.lam) - restored
            x = x + delta
            try:
                ensure_finite(x, f'solver state at repeat {repeat}, step {i}')
            except NumericalFailureError:
                logger.exception('inverse solver diverged')
                raise
            if callback is not None:
                callback(repeat, i, x)
        logger.debug(
            'repeat %d: |A x - y| = %.4g',
            repeat,
            float(np.linalg.norm(task.apply(x) - task.observation)),
        )
    return Solution(reconstruction=x, nfe=nfe)


def image_metrics(
    task: InverseTask,
    images: NDArray[np.float64],
) -> tuple[float, float]:
    """Mean PSNR and SSIM of `images` against the task's ground truth."""
    if task.ground_truth is None:
        msg = 'the task has no ground truth to compare against'
        raise InvalidArgumentError(msg)
    pairs = list(zip(images, task.ground_truth, strict=True))
    return (
        float(np.mean([psnr(image, truth) for image, truth in pairs])),
        float(np.mean([ssim(image, truth) for image, truth in pairs])),
    )


__all__ = (
    'DEFAULT_SOLVER_CONFIGS',
    'TASK_KINDS',
    'InverseTask',
    'Solution',
    'SolverConfig',
    'TaskKind',
    'baseline_reconstruct',
    'image_metrics',
    'make_colorize',
    'make_denoise',
    'make_sr',
    'prox_fidelity',
    'solve',
)
