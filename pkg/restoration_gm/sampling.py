"""Hierarchical generation and the auxiliary-variable restoration study."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Literal

import numpy as np

from restoration_gm.degradation import (
    forward_sample,
    is_decomposable,
    latent_sample,
    posterior_sample,
)
from restoration_gm.errors import (
    InvalidArgumentError,
    InvalidStateError,
    UnsupportedScheduleError,
)
from restoration_gm.logger import logger
from restoration_gm.neural import generator_apply
from restoration_gm.numerics import ensure_finite, gaussian_batch

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from restoration_gm.config import ZMode
    from restoration_gm.degradation import DegradationSchedule
    from restoration_gm.neural import Generator
    from restoration_gm.numerics import Rng

Transition = Literal['forward', 'posterior']


@dataclass(frozen=True)
class SampleBatch:
    """Generated data points and where they came from."""

    samples: NDArray[np.float64]
    nfe: int
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self: SampleBatch) -> None:
        """Reject non-finite samples."""
        ensure_finite(self.samples, 'generated samples')

    @property
    def count(self: SampleBatch) -> int:
        """Number of samples."""
        return self.samples.shape[0]


def draw_z(
    generator: Generator,
    count: int,
    rng: Rng,
    z_mode: ZMode = 'gaussian',
) -> NDArray[np.float64] | None:
    """Auxiliary input for `count` restorations; `None` for a generator without z."""
    width = generator.config.z_dim
    if not width:
        return None
    if z_mode == 'zero':
        return np.zeros((count, width))
    return gaussian_batch(count, width, rng)


def generate(  # noqa: PLR0913
    generator: Generator,
    schedule: DegradationSchedule,
    n: int,
    rng: Rng,
    *,
    transition: Transition = 'forward',
    z_mode: ZMode = 'gaussian',
    provenance: dict[str, Any] | None = None,
) -> SampleBatch:
    """Run the restoration chain from `y_T ~ p_T` down to data space.

    Step `k` restores `x_hat = G(y_k, k, z)` with fresh `z` and re-degrades it to
    `y_{k-1} ~ N(A_{k-1} x_hat, Sigma_{k-1})`, or draws `y_{k-1}` from the
    posterior `p(y_{k-1} | y_k, x_hat)` when `transition='posterior'`. The chain
    makes exactly `T` generator calls and returns the last restoration.
    """
    if n < 1:
        msg = f'n must be at least 1, got {n}'
        raise InvalidArgumentError(msg)
    if transition == 'posterior' and not is_decomposable(schedule):
        msg = f'posterior transitions need a decomposable schedule, not {schedule.kind}'
        raise UnsupportedScheduleError(msg)
    y = latent_sample(schedule, rng, n)
    x_hat = y
    nfe = 0
    for k in range(schedule.total_steps, 0, -1):
        z = draw_z(generator, n, rng, z_mode)
        x_hat = generator_apply(generator, y, k, z, schedule)
        nfe += 1
        if k == 1:
            break
        if transition == 'posterior':
            y = posterior_sample(schedule, k, y, x_hat, rng)
        else:
            y = forward_sample(schedule.step(k - 1), x_hat, rng)
        schedule.check_dim(k - 1, y, 'y')
        logger.debug('restored step %d, |y| = %.4g', k, float(np.linalg.norm(y)))
    return SampleBatch(
        samples=x_hat,
        nfe=nfe,
        provenance={'count': n, 'transition': transition, **(provenance or {})},
    )


def generate_mmse(
    generator: Generator,
    schedule: DegradationSchedule,
    n: int,
    rng: Rng,
    provenance: dict[str, Any] | None = None,
) -> SampleBatch:
    """The same chain driven by a deterministic MMSE restorer."""
    if generator.config.z_dim:
        msg = 'an MMSE restorer takes no auxiliary variable'
        raise InvalidStateError(msg)
    return generate(generator, schedule, n, rng, provenance=provenance)


@dataclass(frozen=True)
class Restorations:
    """Several restorations of one degraded observation."""

    k: int
    observation: NDArray[np.float64]
    restorations: NDArray[np.float64]

    @property
    def spread(self: Restorations) -> float:
        """Mean pairwise distance between distinct restorations, 0 for one."""
        count = self.restorations.shape[0]
        if count < 2:  # noqa: PLR2004
            return 0.0
        differences = (
            self.restorations[:, np.newaxis, :] - self.restorations[np.newaxis, :, :]
        )
        distances = np.linalg.norm(differences, axis=2)
        return float(np.sum(distances)) / (count * (count - 1))


def restore_variants(  # noqa: PLR0913
    generator: Generator,
    schedule: DegradationSchedule,
    x: NDArray[np.float64],
    k: int,
    z_count: int,
    rng: Rng,
    z_mode: ZMode = 'gaussian',
) -> Restorations:
    """Degrade `x` once to step `k` and restore it with `z_count` auxiliary draws."""
    if not 1 <= k <= schedule.total_steps:
        msg = f'k must lie in [1, {schedule.total_steps}], got {k}'
        raise InvalidArgumentError(msg)
    if z_count < 1:
        msg = f'z_count must be at least 1, got {z_count}'
        raise InvalidArgumentError(msg)
    schedule.check_dim(0, x, 'x')
    observation = forward_sample(schedule.step(k), np.asarray(x, dtype=np.float64), rng)
    z = draw_z(generator, z_count, rng, z_mode)
    restorations = generator_apply(
        generator,
        np.tile(observation, (z_count, 1)),
        k,
        z,
        schedule,
    )
    return Restorations(k=k, observation=observation, restorations=restorations)


__all__ = (
    'Restorations',
    'SampleBatch',
    'Transition',
    'draw_z',
    'generate',
    'generate_mmse',
    'restore_variants',
)
