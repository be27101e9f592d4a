"""Learnable prior terms `g` regularizing restorations toward the data law.

Three interchangeable families share one interface:

- `KLDPrior`: a discriminator `D(y, k)`; the generator term is
  `log(1 - D) - log D`, which equals `-logit` exactly.
- `MMDPrior`: a kernel two-sample distance with a mixture of RBF kernels.
- `DSWDPrior`: sliced Wasserstein distance over directions drawn from a learnable
  projection sampler, itself trained to maximize the distance.

A prior is an immutable value. `update` returns the next prior together with the
value it optimized, `generator_term` returns a value and its gradient w.r.t. the
fake batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, ClassVar, NamedTuple, Protocol, Self

import numpy as np

from restoration_gm.errors import InvalidArgumentError, InvalidStateError
from restoration_gm.neural import (
    Discriminator,
    DiscriminatorConfig,
    MLPParams,
    discriminator_backward,
    discriminator_forward,
    init_params,
    mlp_backward,
    mlp_forward,
    mlp_input_grad,
    mlp_input_grad_vjp,
)
from restoration_gm.numerics import AdamState, Evaluation, adam_step
from restoration_gm.utils import as_batch

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from numpy.typing import NDArray

    from restoration_gm.config import PriorKind, ResolvedPrior, ResolvedTrainConfig
    from restoration_gm.degradation import DegradationSchedule
    from restoration_gm.neural import Tape
    from restoration_gm.numerics import Rng


def _sigmoid(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    return 0.5 * (1.0 + np.tanh(0.5 * logits))


def _softplus(logits: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.logaddexp(0.0, logits)


def kld_generator_term(
    discriminator: Discriminator,
    fake: NDArray[np.float64],
    k: int,
    schedule: DegradationSchedule,
) -> Evaluation:
    """Mean of `log(1 - D(fake)) - log D(fake)` and its gradient w.r.t. `fake`.

    In logit form the summand is `-logit`, finite for every finite input.
    """
    batch, was_vector = as_batch(fake)
    logits, tape = discriminator_forward(discriminator, batch, k, schedule)
    count = logits.shape[0]
    _, grad = discriminator_backward(
        discriminator,
        tape,
        np.full(count, -1.0 / count),
        k,
        schedule,
    )
    return Evaluation(float(-np.mean(logits)), grad[0] if was_vector else grad)


def gan_logit_loss(
    real_logits: NDArray[np.float64],
    fake_logits: NDArray[np.float64],
) -> float:
    """`-[mean log D(real) + mean log(1 - D(fake))]` from raw logits."""
    return float(np.mean(_softplus(-real_logits)) + np.mean(_softplus(fake_logits)))


class DiscriminatorLoss(NamedTuple):
    """Discriminator objective, its parameter gradient and the R1 share."""

    value: float
    grads: MLPParams
    r1: float


def discriminator_loss(  # noqa: PLR0913
    discriminator: Discriminator,
    real: NDArray[np.float64],
    fake: NDArray[np.float64],
    k: int,
    schedule: DegradationSchedule,
    r1_gamma: float,
) -> DiscriminatorLoss:
    """Loss to minimize: the GAN classification loss plus `r1_gamma/2 E||grad_y D||^2`.

    The R1 penalty is taken on the real batch only.
    """
    if r1_gamma < 0:
        msg = f'r1_gamma must be non-negative, got {r1_gamma}'
        raise InvalidArgumentError(msg)
    real_batch, _ = as_batch(real)
    fake_batch, _ = as_batch(fake)
    if not real_batch.shape[0] or not fake_batch.shape[0]:
        msg = 'discriminator batches must be nonempty'
        raise InvalidArgumentError(msg)

    real_logits, real_tape = discriminator_forward(
        discriminator,
        real_batch,
        k,
        schedule,
    )
    fake_logits, fake_tape = discriminator_forward(
        discriminator,
        fake_batch,
        k,
        schedule,
    )
    value = gan_logit_loss(real_logits, fake_logits)
    real_grads, _ = mlp_backward(
        real_tape,
        (-_sigmoid(-real_logits) / real_logits.shape[0])[:, np.newaxis],
    )
    fake_grads, _ = mlp_backward(
        fake_tape,
        (_sigmoid(fake_logits) / fake_logits.shape[0])[:, np.newaxis],
    )
    grads = real_grads.plus(fake_grads)

    r1 = 0.0
    if r1_gamma > 0:
        step = schedule.step(k)
        data_dim = discriminator.config.data_dim
        input_grad = mlp_input_grad(real_tape)
        y_grad = step.lift_adjoint(input_grad[:, :data_dim])
        count = y_grad.shape[0]
        r1 = float(np.sum(y_grad * y_grad)) / count
        cotangent = np.zeros_like(input_grad)
        cotangent[:, :data_dim] = (2.0 / count) * step.lift(y_grad)
        grads = grads.plus(
            mlp_input_grad_vjp(real_tape, cotangent),
            scale=0.5 * r1_gamma,
        )
        value += 0.5 * r1_gamma * r1
    return DiscriminatorLoss(value=value, grads=grads, r1=r1)


def _squared_distances(
    a: NDArray[np.float64],
    b: NDArray[np.float64],
) -> NDArray[np.float64]:
    squared = (
        np.sum(a * a, axis=1)[:, np.newaxis]
        + np.sum(b * b, axis=1)[np.newaxis, :]
        - 2.0 * a @ b.T
    )
    return np.maximum(squared, 0.0)


def _kernel_and_slope(
    a: NDArray[np.float64],
    b: NDArray[np.float64],
    bandwidths: Sequence[float],
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Kernel matrix `sum_b exp(-d^2 / 2 s_b^2)` and `sum_b exp(...) / s_b^2`."""
    squared = _squared_distances(a, b)
    kernel = np.zeros_like(squared)
    slope = np.zeros_like(squared)
    for bandwidth in bandwidths:
        variance = bandwidth * bandwidth
        values = np.exp(-squared / (2.0 * variance))
        kernel += values
        slope += values / variance
    return kernel, slope


def _pull(
    slope: NDArray[np.float64],
    a: NDArray[np.float64],
    b: NDArray[np.float64],
) -> NDArray[np.float64]:
    """`sum_j slope_ij (b_j - a_i)`, the kernel gradient at every `a_i`."""
    return slope @ b - slope.sum(axis=1)[:, np.newaxis] * a


def mmd(
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    bandwidths: Sequence[float],
) -> Evaluation:
    """Kernel MMD over ordered off-diagonal pairs, normalized by `C(M, 2)`.

    Returns the value and its gradient w.r.t. `x`.
    """
    if x.ndim != 2 or x.shape != y.shape:  # noqa: PLR2004
        msg = f'batches must share a 2-D shape, got {x.shape} and {y.shape}'
        raise InvalidArgumentError(msg)
    count = x.shape[0]
    if count < 2:  # noqa: PLR2004
        msg = f'MMD needs at least two samples per batch, got {count}'
        raise InvalidArgumentError(msg)
    if not bandwidths or any(b <= 0 for b in bandwidths):
        msg = f'bandwidths must be positive, got {bandwidths}'
        raise InvalidArgumentError(msg)
    pairs = count * (count - 1) / 2.0
    off_diagonal = 1.0 - np.eye(count)

    k_xx, s_xx = _kernel_and_slope(x, x, bandwidths)
    k_yy, _ = _kernel_and_slope(y, y, bandwidths)
    k_xy, s_xy = _kernel_and_slope(x, y, bandwidths)
    s_xx *= off_diagonal
    s_xy *= off_diagonal
    value = (
        np.sum(k_xx * off_diagonal)
        - 2.0 * np.sum(k_xy * off_diagonal)
        + np.sum(k_yy * off_diagonal)
    ) / pairs
    grad = (2.0 * _pull(s_xx, x, x) - 2.0 * _pull(s_xy, x, y)) / pairs
    return Evaluation(float(value), grad)


def sliced_w2_1d(xs: NDArray[np.float64], ys: NDArray[np.float64]) -> float:
    """`W_2^2` between two equal-weight empirical laws on the line."""
    if np.shape(xs) != np.shape(ys):
        msg = f'sliced distance needs equal lengths, got {np.shape(xs)}, {np.shape(ys)}'
        raise InvalidArgumentError(msg)
    if not np.size(xs):
        return 0.0
    difference = np.sort(xs) - np.sort(ys)
    return float(np.mean(difference * difference))


class _SlicedTerms(NamedTuple):
    value: float
    grad_x: NDArray[np.float64]
    grad_directions: NDArray[np.float64]


def _sliced_terms(
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    directions: NDArray[np.float64],
) -> _SlicedTerms:
    """Mean over rows of `directions` of the projected `W_2^2`, with gradients."""
    count, projections = x.shape[0], directions.shape[0]
    projected_x = x @ directions.T
    projected_y = y @ directions.T
    order_x = np.argsort(projected_x, axis=0, kind='stable')
    order_y = np.argsort(projected_y, axis=0, kind='stable')
    difference = np.take_along_axis(projected_x, order_x, axis=0) - np.take_along_axis(
        projected_y,
        order_y,
        axis=0,
    )
    value = float(np.mean(difference * difference))
    slope = 2.0 * difference / (count * projections)
    slope_x = np.empty_like(slope)
    slope_y = np.empty_like(slope)
    np.put_along_axis(slope_x, order_x, slope, axis=0)
    np.put_along_axis(slope_y, order_y, -slope, axis=0)
    return _SlicedTerms(
        value=value,
        grad_x=slope_x @ directions,
        grad_directions=slope_x.T @ x + slope_y.T @ y,
    )


def sliced_wasserstein(
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    directions: NDArray[np.float64],
) -> Evaluation:
    """Mean `sliced_w2_1d` of the projections of `x` and `y` onto unit rows."""
    if x.ndim != 2 or x.shape != y.shape:  # noqa: PLR2004
        msg = f'batches must share a 2-D shape, got {x.shape} and {y.shape}'
        raise InvalidArgumentError(msg)
    if directions.ndim != 2 or directions.shape[1] != x.shape[1]:  # noqa: PLR2004
        msg = f'directions {directions.shape} do not match data width {x.shape[1]}'
        raise InvalidArgumentError(msg)
    terms = _sliced_terms(x, y, directions)
    return Evaluation(terms.value, terms.grad_x)


def _diversity(directions: NDArray[np.float64]) -> Evaluation:
    """Mean squared cosine over ordered pairs of distinct unit directions."""
    count = directions.shape[0]
    if count < 2:  # noqa: PLR2004
        return Evaluation(0.0, np.zeros_like(directions))
    cosines = directions @ directions.T
    np.fill_diagonal(cosines, 0.0)
    pairs = count * (count - 1)
    return Evaluation(
        float(np.sum(cosines * cosines)) / pairs,
        4.0 * cosines @ directions / pairs,
    )


@dataclass(frozen=True)
class SamplerState:
    """Projection sampler `noise -> direction` and its optimizer."""

    params: MLPParams
    optimizer: AdamState

    @property
    def dim(self: SamplerState) -> int:
        """Width of the directions it draws."""
        return self.params.layer_dims[-1]


def init_sampler(dim: int, hidden: int, lr: float, rng: Rng) -> SamplerState:
    """A two-layer projection sampler for `dim`-dimensional directions."""
    params = init_params((dim, hidden, dim), rng)
    return SamplerState(
        params=params,
        optimizer=AdamState.zeros_like(params.tensors(), lr=lr),
    )


def _draw_directions(
    sampler: MLPParams,
    noise: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64], Tape]:
    raw, tape = mlp_forward(sampler, noise)
    norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
    return raw / norms, norms, tape


def dswd_directions(  # noqa: PLR0913
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    settings: ResolvedPrior,
    sampler: SamplerState,
    rng: Rng,
) -> tuple[NDArray[np.float64], SamplerState]:
    """Train the sampler to maximize the sliced distance, then draw final directions.

    Each ascent step maximizes the mean projected `W_2^2` minus `lambda_c` times
    the direction-diversity penalty, for fresh sampler noise.
    """
    projections, dim = settings.num_projections, sampler.dim
    if x.shape[1] != dim:
        msg = f'sampler draws {dim}-dimensional directions, data has width {x.shape[1]}'
        raise InvalidArgumentError(msg)
    for _ in range(settings.dsw_iterations):
        directions, norms, tape = _draw_directions(
            sampler.params,
            rng.standard_normal((projections, dim)),
        )
        sliced = _sliced_terms(x, y, directions)
        diversity = _diversity(directions)
        ascent = sliced.grad_directions - settings.lambda_c * diversity.grad
        radial = np.sum(ascent * directions, axis=1, keepdims=True)
        raw_grad = -(ascent - radial * directions) / norms
        grads, _ = mlp_backward(tape, raw_grad)
        tensors, optimizer = adam_step(
            sampler.params.tensors(),
            grads.tensors(),
            sampler.optimizer,
        )
        sampler = SamplerState(
            params=sampler.params.with_tensors(tensors),
            optimizer=optimizer,
        )
    directions, _, _ = _draw_directions(
        sampler.params,
        rng.standard_normal((projections, dim)),
    )
    return directions, sampler


class DSWDResult(NamedTuple):
    """Distributional sliced distance, its `x` gradient and the trained sampler."""

    value: float
    grad: NDArray[np.float64]
    sampler: SamplerState
    directions: NDArray[np.float64]


def _features(
    feature_map: MLPParams | None,
    batch: NDArray[np.float64],
) -> tuple[NDArray[np.float64], Tape | None]:
    if feature_map is None:
        return batch, None
    return mlp_forward(feature_map, batch)


def dswd(  # noqa: PLR0913
    x: NDArray[np.float64],
    y: NDArray[np.float64],
    settings: ResolvedPrior,
    sampler: SamplerState,
    rng: Rng,
    feature_map: MLPParams | None = None,
) -> DSWDResult:
    """Distributional sliced Wasserstein distance between `x` and `y`.

    With a `feature_map` both batches are compared in its output space.
    """
    if x.ndim != 2 or x.shape != y.shape:  # noqa: PLR2004
        msg = f'batches must share a 2-D shape, got {x.shape} and {y.shape}'
        raise InvalidArgumentError(msg)
    features_x, tape = _features(feature_map, x)
    features_y, _ = _features(feature_map, y)
    directions, sampler = dswd_directions(
        features_x,
        features_y,
        settings,
        sampler,
        rng,
    )
    value, grad = sliced_wasserstein(features_x, features_y, directions)
    if tape is not None:
        _, grad = mlp_backward(tape, grad)
    return DSWDResult(value=value, grad=grad, sampler=sampler, directions=directions)


class PriorBatch(NamedTuple):
    """Real and fake batches of one step group, weighted by its share of the batch."""

    k: int
    real: NDArray[np.float64]
    fake: NDArray[np.float64]
    weight: float


class PriorTerm(Protocol):
    """What the training loop needs from a prior."""

    kind: ClassVar[PriorKind]

    def update(
        self: Self,
        batches: Sequence[PriorBatch],
        schedule: DegradationSchedule,
        rng: Rng,
    ) -> tuple[Self, float]:
        """Advance the learnable state on the given groups; return the new prior."""
        ...

    def generator_term(
        self: Self,
        fake: NDArray[np.float64],
        real: NDArray[np.float64],
        k: int,
        schedule: DegradationSchedule,
    ) -> Evaluation:
        """Prior value of a fake batch at step `k` and its gradient."""
        ...


@dataclass(frozen=True)
class KLDPrior:
    """Discriminator prior trained with the R1-regularized GAN loss."""

    kind: ClassVar[PriorKind] = 'kld'

    discriminator: Discriminator
    optimizer: AdamState
    r1_gamma: float = 0.0

    def update(
        self: KLDPrior,
        batches: Sequence[PriorBatch],
        schedule: DegradationSchedule,
        rng: Rng,  # noqa: ARG002
    ) -> tuple[KLDPrior, float]:
        """One Adam step on the group-weighted discriminator loss."""
        total = 0.0
        grads = self.discriminator.params.zeros_like()
        for batch in batches:
            loss = discriminator_loss(
                self.discriminator,
                batch.real,
                batch.fake,
                batch.k,
                schedule,
                self.r1_gamma,
            )
            total += batch.weight * loss.value
            grads = grads.plus(loss.grads, scale=batch.weight)
        if not batches:
            return self, 0.0
        tensors, optimizer = adam_step(
            self.discriminator.params.tensors(),
            grads.tensors(),
            self.optimizer,
        )
        discriminator = replace(
            self.discriminator,
            params=self.discriminator.params.with_tensors(tensors),
        )
        return replace(self, discriminator=discriminator, optimizer=optimizer), total

    def generator_term(
        self: KLDPrior,
        fake: NDArray[np.float64],
        real: NDArray[np.float64],  # noqa: ARG002
        k: int,
        schedule: DegradationSchedule,
    ) -> Evaluation:
        """`-mean D(fake)` in logit form."""
        return kld_generator_term(self.discriminator, fake, k, schedule)


@dataclass(frozen=True)
class MMDPrior:
    """Fixed kernel prior; its update only reports the current distance."""

    kind: ClassVar[PriorKind] = 'mmd'

    bandwidths: tuple[float, ...]

    def update(
        self: MMDPrior,
        batches: Sequence[PriorBatch],
        schedule: DegradationSchedule,  # noqa: ARG002
        rng: Rng,  # noqa: ARG002
    ) -> tuple[MMDPrior, float]:
        """Group-weighted MMD of the fake batches, groups of one are skipped."""
        total = sum(
            batch.weight * mmd(batch.fake, batch.real, self.bandwidths).value
            for batch in batches
            if batch.fake.shape[0] >= 2  # noqa: PLR2004
        )
        return self, float(total)

    def generator_term(
        self: MMDPrior,
        fake: NDArray[np.float64],
        real: NDArray[np.float64],
        k: int,  # noqa: ARG002
        schedule: DegradationSchedule,  # noqa: ARG002
    ) -> Evaluation:
        """MMD of `fake` against `real`; zero for a batch of one."""
        if fake.shape[0] < 2:  # noqa: PLR2004
            return Evaluation(0.0, np.zeros_like(fake))
        return mmd(fake, real, self.bandwidths)


@dataclass(frozen=True)
class DSWDPrior:
    """Sliced Wasserstein prior over learned projection distributions.

    Batches are compared after lifting to data space, optionally through a frozen
    random feature map. `update` trains the sampler on each group and caches that
    group's final directions for the following `generator_term` call.
    """

    kind: ClassVar[PriorKind] = 'dswd'

    settings: ResolvedPrior
    sampler: SamplerState
    feature_map: MLPParams | None = None
    directions: Mapping[int, NDArray[np.float64]] = field(default_factory=dict)

    def _lifted_features(
        self: DSWDPrior,
        batch: NDArray[np.float64],
        k: int,
        schedule: DegradationSchedule,
    ) -> tuple[NDArray[np.float64], Tape | None]:
        return _features(self.feature_map, schedule.step(k).lift(batch))

    def update(
        self: DSWDPrior,
        batches: Sequence[PriorBatch],
        schedule: DegradationSchedule,
        rng: Rng,
    ) -> tuple[DSWDPrior, float]:
        """Ascend the sampler on every group of two or more, in step order."""
        sampler = self.sampler
        directions: dict[int, NDArray[np.float64]] = {}
        total = 0.0
        for batch in batches:
            if batch.fake.shape[0] < 2:  # noqa: PLR2004
                continue
            fake, _ = self._lifted_features(batch.fake, batch.k, schedule)
            real, _ = self._lifted_features(batch.real, batch.k, schedule)
            directions[batch.k], sampler = dswd_directions(
                fake,
                real,
                self.settings,
                sampler,
                rng,
            )
            total += batch.weight * sliced_wasserstein(
                fake,
                real,
                directions[batch.k],
            ).value
        return replace(self, sampler=sampler, directions=directions), total

    def generator_term(
        self: DSWDPrior,
        fake: NDArray[np.float64],
        real: NDArray[np.float64],
        k: int,
        schedule: DegradationSchedule,
    ) -> Evaluation:
        """Sliced distance along the directions cached for step `k`."""
        if fake.shape[0] < 2:  # noqa: PLR2004
            return Evaluation(0.0, np.zeros_like(fake))
        if k not in self.directions:
            msg = f'no projection directions for step {k}; run update first'
            raise InvalidStateError(msg)
        features_fake, tape = self._lifted_features(fake, k, schedule)
        features_real, _ = self._lifted_features(real, k, schedule)
        value, grad = sliced_wasserstein(
            features_fake,
            features_real,
            self.directions[k],
        )
        if tape is not None:
            _, grad = mlp_backward(tape, grad)
        return Evaluation(value, schedule.step(k).lift_adjoint(grad))


Prior = KLDPrior | MMDPrior | DSWDPrior


def make_discriminator(
    config: ResolvedTrainConfig,
    schedule: DegradationSchedule,
    rng: Rng,
) -> Discriminator:
    """Fresh discriminator sized for `schedule`."""
    discriminator_config = DiscriminatorConfig(
        data_dim=schedule.data_dim,
        steps=schedule.total_steps,
        hidden=config.hidden,
        depth=config.depth,
        step_encoding=config.step_encoding,
    )
    return Discriminator(
        params=init_params(discriminator_config, rng),
        config=discriminator_config,
    )


def make_prior(
    config: ResolvedTrainConfig,
    schedule: DegradationSchedule,
    rng: Rng,
) -> Prior:
    """Initial prior of the configured kind."""
    settings = config.prior
    if settings.kind == 'kld':
        discriminator = make_discriminator(config, schedule, rng)
        return KLDPrior(
            discriminator=discriminator,
            optimizer=AdamState.zeros_like(
                discriminator.params.tensors(),
                lr=config.lr_d,
            ),
            r1_gamma=config.r1_gamma,
        )
    if settings.kind == 'mmd':
        return MMDPrior(bandwidths=settings.bandwidths)
    feature_map = None
    dim = schedule.data_dim
    if settings.feature_dim > 0:
        feature_map = init_params(
            (dim, config.hidden, settings.feature_dim),
            rng,
            output_activation='tanh',
        )
        dim = settings.feature_dim
    return DSWDPrior(
        settings=settings,
        sampler=init_sampler(
            dim,
            max(config.hidden, dim),
            settings.sampler_lr,
            rng,
        ),
        feature_map=feature_map,
    )


__all__ = (
    'DSWDPrior',
    'DSWDResult',
    'DiscriminatorLoss',
    'KLDPrior',
    'MMDPrior',
    'Prior',
    'PriorBatch',
    'PriorTerm',
    'SamplerState',
    'discriminator_loss',
    'dswd',
    'dswd_directions',
    'gan_logit_loss',
    'init_sampler',
    'kld_generator_term',
    'make_discriminator',
    'make_prior',
    'mmd',
    'sliced_w2_1d',
    'sliced_wasserstein',
)
