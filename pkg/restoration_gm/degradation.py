"""Forward-process algebra of restoration-based generative models.

Every step `k` of a schedule degrades a data point `x` by

    y_k = a_k * P_{j_k} x + sigma_k * n,    n ~ N(0, I) in the step-k space,

where `P_j` averages `2^j x 2^j` pixel blocks per channel (`P_0 = I`). Noise is
isotropic in the degraded space, so `Sigma_k = sigma_k^2 I` there; with
`P_j P_j^T = 4^-j I` this reproduces the latent laws `N(0, I)`, `N(0, I/64)` and
`N(0, 4 I)` of the three schedule families.

Batches are `(n, dim)` float64 matrices holding row-major `(H, W, C)` images or
plain vectors; a single vector is accepted wherever a batch is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, cast

import numpy as np

from restoration_gm.config import ScheduleDescriptor, ScheduleKind, resolve_schedule
from restoration_gm.constants import BETA_MAX, BETA_MIN
from restoration_gm.errors import (
    InvalidArgumentError,
    UnsupportedScheduleError,
)
from restoration_gm.logger import logger
from restoration_gm.numerics import Evaluation
from restoration_gm.utils import as_batch, unbatch

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from restoration_gm.numerics import Rng


@dataclass(frozen=True)
class BetaParams:
    """End points of the beta schedule."""

    beta_max: float = BETA_MAX
    beta_min: float = BETA_MIN

    def __post_init__(self: BetaParams) -> None:
        """Check `beta_max > beta_min > 0`."""
        if not self.beta_max > self.beta_min > 0:
            msg = f'need beta_max > beta_min > 0, got {self.beta_max}, {self.beta_min}'
            raise InvalidArgumentError(msg)


def _check_beta_index(k: float, t_beta: float) -> float:
    if t_beta <= 0:
        msg = f'T_beta must be positive, got {t_beta}'
        raise InvalidArgumentError(msg)
    if not 0 <= k <= t_beta:
        msg = f'beta index must lie in [0, {t_beta}], got {k}'
        raise InvalidArgumentError(msg)
    return k / t_beta


def beta(k: float, t_beta: float, params: BetaParams | None = None) -> float:
    """Quadratic schedule `1/4 (b_max - b_min) (k/T)^2 + 1/2 b_min (k/T)`."""
    params = params or BetaParams()
    ratio = _check_beta_index(k, t_beta)
    return 0.25 * (params.beta_max - params.beta_min) * ratio**2 + (
        0.5 * params.beta_min * ratio
    )


def beta_tilde(k: float, t_beta: float, params: BetaParams | None = None) -> float:
    """Quartic schedule `1/4 (b_max - b_min) (k/T)^4 + 1/2 b_min (k/T)^2`."""
    params = params or BetaParams()
    ratio = _check_beta_index(k, t_beta)
    return 0.25 * (params.beta_max - params.beta_min) * ratio**4 + (
        0.5 * params.beta_min * ratio**2
    )


@dataclass(frozen=True)
class BlockAvgOp:
    """`P_j`: average `2^j x 2^j` blocks of an `(H, W, C)` image per channel."""

    level: int
    shape: tuple[int, int, int]

    def __post_init__(self: BlockAvgOp) -> None:
        """Check that the image divides into blocks."""
        height, width, _ = self.shape
        if self.level < 0:
            msg = f'level must be non-negative, got {self.level}'
            raise InvalidArgumentError(msg)
        if height % self.block or width % self.block:
            msg = f'shape {self.shape} is not divisible by {self.block}'
            raise InvalidArgumentError(msg)

    @property
    def block(self: BlockAvgOp) -> int:
        """Side of an averaged block."""
        return 2**self.level

    @property
    def out_shape(self: BlockAvgOp) -> tuple[int, int, int]:
        """Shape of the reduced image."""
        height, width, channels = self.shape
        return height // self.block, width // self.block, channels

    @property
    def in_dim(self: BlockAvgOp) -> int:
        """Flat size of the input image."""
        return math.prod(self.shape)

    @property
    def out_dim(self: BlockAvgOp) -> int:
        """Flat size of the reduced image."""
        return math.prod(self.out_shape)

    def _split(self: BlockAvgOp, count: int) -> tuple[int, ...]:
        height, width, channels = self.out_shape
        return count, height, self.block, width, self.block, channels

    def apply(self: BlockAvgOp, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Average blocks of a batch of flat images."""
        batch, was_vector = as_batch(x)
        if self.level == 0:
            return unbatch(batch.copy(), was_vector)
        reduced = batch.reshape(self._split(batch.shape[0])).mean(axis=(2, 4))
        return unbatch(reduced.reshape(batch.shape[0], -1), was_vector)

    def replicate(self: BlockAvgOp, y: NDArray[np.float64]) -> NDArray[np.float64]:
        """Nearest-neighbour upsampling, the pseudoinverse `P_j^+ = 4^j P_j^T`."""
        batch, was_vector = as_batch(y)
        if self.level == 0:
            return unbatch(batch.copy(), was_vector)
        height, width, channels = self.out_shape
        grid = batch.reshape(batch.shape[0], height, 1, width, 1, channels)
        full = np.broadcast_to(grid, self._split(batch.shape[0]))
        return unbatch(full.reshape(batch.shape[0], -1), was_vector)

    def adjoint(self: BlockAvgOp, y: NDArray[np.float64]) -> NDArray[np.float64]:
        """`P_j^T y`."""
        return self.replicate(y) / float(self.block * self.block)

    def sum_pool(self: BlockAvgOp, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Adjoint of `replicate`: sum over blocks."""
        return self.apply(x) * float(self.block * self.block)


@dataclass(frozen=True)
class StepOperator:
    """One forward step `(A_k, Sigma_k) = (a_k P_{j_k}, sigma_k^2 I)`."""

    k: int
    gain: float
    level: int
    sigma: float
    dim: int
    projection: BlockAvgOp | None

    def project(self: StepOperator, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """`P_{j_k} x`."""
        if self.projection is None:
            return np.array(x, dtype=np.float64, copy=True)
        return self.projection.apply(x)

    def project_adjoint(
        self: StepOperator,
        y: NDArray[np.float64],
    ) -> NDArray[np.float64]:
        """`P_{j_k}^T y`."""
        if self.projection is None:
            return np.array(y, dtype=np.float64, copy=True)
        return self.projection.adjoint(y)

    def lift(self: StepOperator, y: NDArray[np.float64]) -> NDArray[np.float64]:
        """Carry a step-k vector back to data space by block replication."""
        if self.projection is None:
            return np.array(y, dtype=np.float64, copy=True)
        return self.projection.replicate(y)

    def lift_adjoint(
        self: StepOperator,
        g: NDArray[np.float64],
    ) -> NDArray[np.float64]:
        """Adjoint of `lift`."""
        if self.projection is None:
            return np.array(g, dtype=np.float64, copy=True)
        return self.projection.sum_pool(g)


@dataclass(frozen=True)
class Decomposition:
    """Transition `p(y_k | y_{k-1}) = N(gain * y_{k-1}, noise_var I)` if valid."""

    k: int
    gain: float | None
    noise_var: float | None
    valid: bool


@dataclass(frozen=True)
class PosteriorCoefficients:
    """`p(y_{k-1} | y_k, x) = N(x_weight A_{k-1} x + y_weight y_k, std^2 I)`."""

    x_weight: float
    y_weight: float
    std: float


@dataclass(frozen=True)
class DegradationSchedule:
    """The steps `k = 0..T` of a forward process and its latent law."""

    kind: ScheduleKind
    data_shape: tuple[int, ...]
    steps: tuple[StepOperator, ...]
    beta_params: BetaParams

    @property
    def total_steps(self: DegradationSchedule) -> int:
        """Number of degradation steps `T`."""
        return len(self.steps) - 1

    @property
    def data_dim(self: DegradationSchedule) -> int:
        """Flat size of one data point."""
        return math.prod(self.data_shape)

    @property
    def latent_std(self: DegradationSchedule) -> float:
        """Standard deviation `s_T` of the latent law `N(0, s_T^2 I)`."""
        return self.steps[-1].sigma

    def step(self: DegradationSchedule, k: int) -> StepOperator:
        """Return the operator of step `k`."""
        if not 0 <= k <= self.total_steps:
            msg = f'step must lie in [0, {self.total_steps}], got {k}'
            raise InvalidArgumentError(msg)
        return self.steps[k]

    def dim(self: DegradationSchedule, k: int) -> int:
        """Dimension of the step-k degraded space."""
        return self.step(k).dim

    def descriptor(self: DegradationSchedule) -> ScheduleDescriptor:
        """Return the JSON descriptor that rebuilds this schedule."""
        return {
            'kind': self.kind,
            'steps': self.total_steps,
            'data_shape': list(self.data_shape),
            'beta_max': self.beta_params.beta_max,
            'beta_min': self.beta_params.beta_min,
        }

    def check_dim(
        self: DegradationSchedule,
        k: int,
        y: NDArray[np.float64],
        what: str = 'input',
    ) -> None:
        """Raise unless the last axis of `y` is the step-k dimension."""
        expected = self.dim(k)
        if np.shape(y)[-1] != expected:
            msg = f'{what} has dimension {np.shape(y)[-1]}, step {k} expects {expected}'
            raise InvalidArgumentError(msg)

    def table(self: DegradationSchedule) -> list[dict[str, object]]:
        """Per-step rows `{k, a_k, j_k, sigma_k, dim, decomposable}`."""
        rows: list[dict[str, object]] = []
        for step in self.steps:
            rows.append(
                {
                    'k': step.k,
                    'a_k': step.gain,
                    'j_k': step.level,
                    'sigma_k': step.sigma,
                    'dim': self.dim(step.k),
                    'decomposable': None
                    if step.k == 0
                    else decompose(self, step.k).valid,
                },
            )
        return rows


def _image_shape(data_shape: Sequence[int]) -> tuple[int, int, int]:
    if len(data_shape) == 3:  # noqa: PLR2004
        return int(data_shape[0]), int(data_shape[1]), int(data_shape[2])
    if len(data_shape) == 2:  # noqa: PLR2004
        return int(data_shape[0]), int(data_shape[1]), 1
    msg = f'block averaging needs an (H, W) or (H, W, C) shape, got {data_shape}'
    raise InvalidArgumentError(msg)


def build_schedule(
    kind: ScheduleKind,
    steps: int,
    data_shape: Sequence[int],
    params: BetaParams | None = None,
) -> DegradationSchedule:
    """Build one of the schedule families for `T = steps`.

    `d` and `d-quartic` only add noise; `sr-naive` downsamples and adds noise at
    every step; `sr` alternates noising (odd k) and downsampling (even k) with
    `T_beta = (T + 1) / 2`.
    """
    params = params or BetaParams()
    if steps < 1:
        msg = f'a schedule needs at least one step, got {steps}'
        raise InvalidArgumentError(msg)
    shape = tuple(int(d) for d in data_shape)
    if not shape or any(d < 1 for d in shape):
        msg = f'invalid data shape {shape}'
        raise InvalidArgumentError(msg)

    gains: list[float] = []
    sigmas: list[float] = []
    levels: list[int] = []
    for k in range(steps + 1):
        if kind in ('d', 'd-quartic'):
            rate = (beta if kind == 'd' else beta_tilde)(k, steps, params)
            gains.append(math.exp(-rate))
            sigmas.append(1.0 - math.exp(-2.0 * rate))
            levels.append(0)
        elif kind == 'sr-naive':
            rate = beta_tilde(k, steps, params)
            gains.append(math.exp(-rate))
            sigmas.append((1.0 - math.exp(-2.0 * rate)) * 2.0**-k)
            levels.append(k)
        elif kind == 'sr':
            up, down = (k + 1) // 2, k // 2
            rate = beta(up, (steps + 1) / 2, params)
            gains.append(math.exp(-rate))
            sigmas.append(2.0**up * (1.0 - math.exp(-2.0 * rate)) * 2.0**-down)
            levels.append(down)
        else:
            msg = f'unknown schedule kind {kind!r}'
            raise InvalidArgumentError(msg)

    if any(levels):
        image_shape = _image_shape(shape)
        projections: list[BlockAvgOp | None] = [
            BlockAvgOp(level=level, shape=image_shape) for level in levels
        ]
    else:
        projections = [None] * (steps + 1)

    schedule = DegradationSchedule(
        kind=kind,
        data_shape=shape,
        steps=tuple(
            StepOperator(
                k=k,
                gain=gains[k],
                level=levels[k],
                sigma=sigmas[k],
                dim=math.prod(shape)
                if projections[k] is None
                else cast('BlockAvgOp', projections[k]).out_dim,
                projection=projections[k],
            )
            for k in range(steps + 1)
        ),
        beta_params=params,
    )
    logger.debug(
        'built %s schedule, T=%d, shape=%s, latent std=%.6g',
        kind,
        steps,
        shape,
        schedule.latent_std,
    )
    return schedule


def schedule_from_descriptor(descriptor: ScheduleDescriptor) -> DegradationSchedule:
    """Rebuild a schedule from its JSON descriptor."""
    resolved = resolve_schedule(cast('dict[str, object]', descriptor))
    return build_schedule(
        resolved['kind'],
        resolved['steps'],
        resolved['data_shape'],
        BetaParams(
            beta_max=resolved.get('beta_max', BETA_MAX),
            beta_min=resolved.get('beta_min', BETA_MIN),
        ),
    )


def apply_A(  # noqa: N802
    step: StepOperator,
    x: NDArray[np.float64],
) -> NDArray[np.float64]:
    """`A_k x = a_k P_{j_k} x`."""
    return step.gain * step.project(x)


def apply_A_adjoint(  # noqa: N802
    step: StepOperator,
    y: NDArray[np.float64],
) -> NDArray[np.float64]:
    """`A_k^T y = a_k P_{j_k}^T y`."""
    return step.gain * step.project_adjoint(y)


def apply_A_pinv(  # noqa: N802
    step: StepOperator,
    y: NDArray[np.float64],
) -> NDArray[np.float64]:
    """`A_k^+ y = a_k^-1` times the block replication of `y`."""
    if step.gain == 0:
        msg = f'A_{step.k} has zero gain and no useful pseudoinverse'
        raise InvalidArgumentError(msg)
    return step.lift(y) / step.gain


def forward_noise_apply(
    step: StepOperator,
    x: NDArray[np.float64],
    noise: NDArray[np.float64],
) -> NDArray[np.float64]:
    """`A_k x + sigma_k noise` for a given standard-normal `noise`."""
    return apply_A(step, x) + step.sigma * noise


def forward_sample(
    step: StepOperator,
    x: NDArray[np.float64],
    rng: Rng,
) -> NDArray[np.float64]:
    """Sample `y_k ~ N(A_k x, sigma_k^2 I)`."""
    mean = apply_A(step, x)
    if step.sigma == 0:
        return mean
    return mean + step.sigma * rng.standard_normal(mean.shape)


def decompose(schedule: DegradationSchedule, k: int) -> Decomposition:
    """Check the Markov decomposition `A_k = gain * A_{k-1}` at step `k`.

    The transition variance is `sigma_k^2 - gain^2 sigma_{k-1}^2`; a resolution
    change between the two steps admits no scalar transition gain.
    """
    if not 1 <= k <= schedule.total_steps:
        msg = f'decomposition needs 1 <= k <= {schedule.total_steps}, got {k}'
        raise InvalidArgumentError(msg)
    current, previous = schedule.step(k), schedule.step(k - 1)
    if current.level != previous.level or previous.gain == 0:
        return Decomposition(k=k, gain=None, noise_var=None, valid=False)
    gain = current.gain / previous.gain
    noise_var = current.sigma**2 - gain**2 * previous.sigma**2
    return Decomposition(k=k, gain=gain, noise_var=noise_var, valid=noise_var > 0)


def is_decomposable(schedule: DegradationSchedule) -> bool:
    """Return `True` when every step `1..T` decomposes."""
    return all(
        decompose(schedule, k).valid for k in range(1, schedule.total_steps + 1)
    )


def _valid_decomposition(schedule: DegradationSchedule, k: int) -> Decomposition:
    decomposition = decompose(schedule, k)
    if not decomposition.valid:
        msg = f'the {schedule.kind} schedule does not decompose at step {k}'
        raise UnsupportedScheduleError(msg)
    return decomposition


def posterior_coefficients(
    schedule: DegradationSchedule,
    k: int,
) -> PosteriorCoefficients:
    """Gaussian conjugacy of `p(y_{k-1} | x)` and `p(y_k | y_{k-1})`."""
    decomposition = _valid_decomposition(schedule, k)
    previous = schedule.step(k - 1)
    if previous.sigma == 0:
        return PosteriorCoefficients(x_weight=1.0, y_weight=0.0, std=0.0)
    gain = cast('float', decomposition.gain)
    noise_var = cast('float', decomposition.noise_var)
    prior_var = previous.sigma**2
    precision = gain**2 / noise_var + 1.0 / prior_var
    return PosteriorCoefficients(
        x_weight=(1.0 / prior_var) / precision,
        y_weight=(gain / noise_var) / precision,
        std=math.sqrt(1.0 / precision),
    )


def posterior_noise_apply(
    schedule: DegradationSchedule,
    k: int,
    y_k: NDArray[np.float64],
    x_hat: NDArray[np.float64],
    noise: NDArray[np.float64],
) -> NDArray[np.float64]:
    """Posterior draw of `y_{k-1}` for a given standard-normal `noise`."""
    coefficients = posterior_coefficients(schedule, k)
    mean = coefficients.x_weight * apply_A(schedule.step(k - 1), x_hat)
    if coefficients.y_weight:
        mean = mean + coefficients.y_weight * y_k
    return mean + coefficients.std * noise


def posterior_sample(
    schedule: DegradationSchedule,
    k: int,
    y_k: NDArray[np.float64],
    x_hat: NDArray[np.float64],
    rng: Rng,
) -> NDArray[np.float64]:
    """Sample `y_{k-1} ~ p(y_{k-1} | y_k, x_hat)`."""
    schedule.check_dim(k, y_k, 'y_k')
    schedule.check_dim(0, x_hat, 'x_hat')
    shape = np.shape(apply_A(schedule.step(k - 1), x_hat))
    return posterior_noise_apply(
        schedule,
        k,
        y_k,
        x_hat,
        rng.standard_normal(shape),
    )


def latent_sample(
    schedule: DegradationSchedule,
    rng: Rng,
    count: int | None = None,
) -> NDArray[np.float64]:
    """Sample `y_T ~ N(0, s_T^2 I)` in the step-T space."""
    dim = schedule.dim(schedule.total_steps)
    shape = (dim,) if count is None else (count, dim)
    return schedule.latent_std * rng.standard_normal(shape)


def _mean_half_square(
    residual: NDArray[np.float64],
    scale: float,
) -> tuple[float, NDArray[np.float64]]:
    batch, _ = as_batch(residual)
    count = batch.shape[0]
    value = 0.5 * scale * float(np.sum(batch * batch)) / count
    return value, scale * residual / count


def fidelity_full(
    schedule: DegradationSchedule,
    k: int,
    x_hat: NDArray[np.float64],
    y_k: NDArray[np.float64],
) -> Evaluation:
    """`1/2 sigma_k^-2 ||A_k x_hat - y_k||^2`, batch-averaged, and its gradient."""
    if k < 1:
        msg = f'the fidelity term needs k >= 1, got {k}'
        raise InvalidArgumentError(msg)
    step = schedule.step(k)
    residual = apply_A(step, x_hat) - y_k
    value, residual_grad = _mean_half_square(residual, step.sigma**-2)
    return Evaluation(value, apply_A_adjoint(step, residual_grad))


def fidelity_transition(
    schedule: DegradationSchedule,
    k: int,
    y_previous: NDArray[np.float64],
    y_k: NDArray[np.float64],
) -> Evaluation:
    """`1/2 noise_var^-1 ||gain y_{k-1} - y_k||^2` with its `y_{k-1}` gradient."""
    decomposition = _valid_decomposition(schedule, k)
    gain = cast('float', decomposition.gain)
    residual = gain * np.asarray(y_previous, dtype=np.float64) - y_k
    value, residual_grad = _mean_half_square(
        residual,
        1.0 / cast('float', decomposition.noise_var),
    )
    return Evaluation(value, gain * residual_grad)


__all__ = (
    'BetaParams',
    'BlockAvgOp',
    'Decomposition',
    'DegradationSchedule',
    'PosteriorCoefficients',
    'StepOperator',
    'apply_A',
    'apply_A_adjoint',
    'apply_A_pinv',
    'beta',
    'beta_tilde',
    'build_schedule',
    'decompose',
    'fidelity_full',
    'fidelity_transition',
    'forward_noise_apply',
    'forward_sample',
    'is_decomposable',
    'latent_sample',
    'posterior_coefficients',
    'posterior_noise_apply',
    'posterior_sample',
    'schedule_from_descriptor',
)
