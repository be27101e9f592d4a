"""Tanh multilayer perceptrons with exact reverse-mode gradients.

Layers are stored as `W_l` of shape `(fan_in, fan_out)` and applied to row batches,
`a_l = h_{l-1} W_l + b_l`. Hidden layers use Tanh, the output layer is affine
unless `output_activation='tanh'`.

`Generator` and `Discriminator` wrap an `MLPParams` with the conditioning layout
`concat(lift(y_k), step_code(k), z)`, where `lift` block-replicates a degraded
vector back to data space so a single network serves every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from restoration_gm.config import StepEncoding
from restoration_gm.errors import (
    InvalidArgumentError,
    InvalidStateError,
    ScheduleMismatchError,
)
from restoration_gm.utils import as_batch, unbatch

if TYPE_CHECKING:
    from collections.abc import Sequence

    from numpy.typing import NDArray

    from restoration_gm.degradation import DegradationSchedule
    from restoration_gm.numerics import Rng

OutputActivation = Literal['none', 'tanh']


@dataclass(frozen=True)
class MLPParams:
    """Weights and biases of a fully-connected network."""

    weights: tuple[NDArray[np.float64], ...]
    biases: tuple[NDArray[np.float64], ...]
    output_activation: OutputActivation = 'none'

    def __post_init__(self: MLPParams) -> None:
        """Check that layer dimensions chain and every entry is finite."""
        if not self.weights or len(self.weights) != len(self.biases):
            msg = 'an MLP needs one bias per weight matrix and at least one layer'
            raise InvalidArgumentError(msg)
        for index, (weight, bias) in enumerate(
            zip(self.weights, self.biases, strict=True),
        ):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):  # noqa: PLR2004
                msg = f'layer {index}: weight {weight.shape}, bias {bias.shape}'
                raise InvalidArgumentError(msg)
            if index and weight.shape[0] != self.weights[index - 1].shape[1]:
                msg = f'layer {index} does not chain with layer {index - 1}'
                raise InvalidArgumentError(msg)
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                msg = f'layer {index} has non-finite entries'
                raise InvalidArgumentError(msg)

    @property
    def layer_dims(self: MLPParams) -> tuple[int, ...]:
        """`(input, hidden..., output)` widths."""
        return (self.weights[0].shape[0], *(w.shape[1] for w in self.weights))

    @property
    def num_params(self: MLPParams) -> int:
        """Total number of scalars."""
        return sum(tensor.size for tensor in self.tensors())

    def tensors(self: MLPParams) -> tuple[NDArray[np.float64], ...]:
        """Flatten to `(W_1, b_1, W_2, b_2, ...)`."""
        return tuple(
            tensor
            for pair in zip(self.weights, self.biases, strict=True)
            for tensor in pair
        )

    def with_tensors(
        self: MLPParams,
        tensors: Sequence[NDArray[np.float64]],
    ) -> MLPParams:
        """Inverse of `tensors`."""
        if len(tensors) != 2 * len(self.weights):
            msg = f'expected {2 * len(self.weights)} tensors, got {len(tensors)}'
            raise InvalidArgumentError(msg)
        return MLPParams(
            weights=tuple(np.asarray(t, dtype=np.float64) for t in tensors[0::2]),
            biases=tuple(np.asarray(t, dtype=np.float64) for t in tensors[1::2]),
            output_activation=self.output_activation,
        )

    def flatten(self: MLPParams) -> NDArray[np.float64]:
        """Concatenate every tensor into one vector, in `tensors()` order."""
        return np.concatenate([t.reshape(-1) for t in self.tensors()])

    def unflatten(self: MLPParams, vector: NDArray[np.float64]) -> MLPParams:
        """Inverse of `flatten` for parameters shaped like `self`."""
        if vector.shape != (self.num_params,):
            msg = f'expected a vector of {self.num_params} values, got {vector.shape}'
            raise InvalidArgumentError(msg)
        tensors = []
        offset = 0
        for tensor in self.tensors():
            tensors.append(vector[offset : offset + tensor.size].reshape(tensor.shape))
            offset += tensor.size
        return self.with_tensors(tensors)

    def zeros_like(self: MLPParams) -> MLPParams:
        """Same shapes, all zero."""
        return self.with_tensors([np.zeros_like(t) for t in self.tensors()])

    def plus(self: MLPParams, other: MLPParams, scale: float = 1.0) -> MLPParams:
        """Return `self + scale * other`."""
        return self.with_tensors(
            [
                a + scale * b
                for a, b in zip(self.tensors(), other.tensors(), strict=True)
            ],
        )


@dataclass(frozen=True)
class Tape:
    """Everything a forward pass recorded for its reverse pass."""

    params: MLPParams
    hiddens: tuple[NDArray[np.float64], ...]
    output: NDArray[np.float64]
    was_vector: bool


def mlp_forward(
    params: MLPParams,
    inputs: NDArray[np.float64],
) -> tuple[NDArray[np.float64], Tape]:
    """Evaluate the network on a vector or a row batch."""
    batch, was_vector = as_batch(inputs)
    if batch.shape[1] != params.layer_dims[0]:
        msg = f'input width {batch.shape[1]}, network expects {params.layer_dims[0]}'
        raise InvalidArgumentError(msg)
    hiddens = [batch]
    activation = batch
    last = len(params.weights) - 1
    for index, (weight, bias) in enumerate(
        zip(params.weights, params.biases, strict=True),
    ):
        pre = activation @ weight + bias
        if index < last or params.output_activation == 'tanh':
            activation = np.tanh(pre)
        else:
            activation = pre
        if index < last:
            hiddens.append(activation)
    tape = Tape(
        params=params,
        hiddens=tuple(hiddens),
        output=activation,
        was_vector=was_vector,
    )
    return unbatch(activation, was_vector), tape


def mlp_backward(
    tape: Tape,
    output_grad: NDArray[np.float64],
) -> tuple[MLPParams, NDArray[np.float64]]:
    """Reverse pass: gradients w.r.t. every parameter and w.r.t. the input."""
    grad, _ = as_batch(output_grad)
    if grad.shape != tape.output.shape:
        msg = f'output gradient {grad.shape} does not match {tape.output.shape}'
        raise InvalidStateError(msg)
    params = tape.params
    if params.output_activation == 'tanh':
        grad = grad * (1.0 - tape.output * tape.output)
    weight_grads: list[NDArray[np.float64]] = [np.empty(0)] * len(params.weights)
    bias_grads: list[NDArray[np.float64]] = [np.empty(0)] * len(params.weights)
    for index in range(len(params.weights) - 1, -1, -1):
        below = tape.hiddens[index]
        weight_grads[index] = below.T @ grad
        bias_grads[index] = grad.sum(axis=0)
        grad = grad @ params.weights[index].T
        if index:
            grad = grad * (1.0 - below * below)
    grads = MLPParams(
        weights=tuple(weight_grads),
        biases=tuple(bias_grads),
        output_activation=params.output_activation,
    )
    return grads, unbatch(grad, tape.was_vector)


def _require_scalar_affine_output(tape: Tape) -> None:
    if tape.params.layer_dims[-1] != 1 or tape.params.output_activation != 'none':
        msg = 'input gradients need a scalar affine output layer'
        raise InvalidStateError(msg)


def _input_grad_chain(
    tape: Tape,
) -> tuple[list[NDArray[np.float64]], list[NDArray[np.float64]]]:
    """Backward pass of a scalar net seeded with ones; keeps `u_l` and `d_l`."""
    weights = tape.params.weights
    depth = len(weights)
    ones = np.ones_like(tape.output)
    us: list[NDArray[np.float64]] = [ones] * (depth + 1)
    ds: list[NDArray[np.float64]] = [ones] * (depth + 1)
    for layer in range(depth, 0, -1):
        us[layer - 1] = ds[layer] @ weights[layer - 1].T
        if layer > 1:
            hidden = tape.hiddens[layer - 1]
            ds[layer - 1] = us[layer - 1] * (1.0 - hidden * hidden)
    return us, ds


def mlp_input_grad(tape: Tape) -> NDArray[np.float64]:
    """Per-example gradient of a scalar output w.r.t. the input row."""
    _require_scalar_affine_output(tape)
    us, _ = _input_grad_chain(tape)
    return unbatch(us[0], tape.was_vector)


def mlp_input_grad_vjp(tape: Tape, cotangent: NDArray[np.float64]) -> MLPParams:
    """Parameter gradient of `sum <cotangent, d output / d input>`.

    This is the second-order pass an input-gradient penalty needs; `cotangent`
    is held constant.
    """
    _require_scalar_affine_output(tape)
    cot, _ = as_batch(cotangent)
    if cot.shape != tape.hiddens[0].shape:
        msg = f'cotangent {cot.shape} does not match the input {tape.hiddens[0].shape}'
        raise InvalidStateError(msg)
    params = tape.params
    weights = params.weights
    depth = len(weights)
    us, ds = _input_grad_chain(tape)

    weight_grads = [np.zeros_like(w) for w in weights]
    bias_grads = [np.zeros_like(b) for b in params.biases]
    injected: list[NDArray[np.float64] | None] = [None] * depth

    u_bar = cot
    for layer in range(1, depth + 1):
        weight_grads[layer - 1] += u_bar.T @ ds[layer]
        d_bar = u_bar @ weights[layer - 1]
        if layer == depth:
            break
        hidden = tape.hiddens[layer]
        slope = 1.0 - hidden * hidden
        injected[layer] = -2.0 * hidden * (d_bar * us[layer])
        u_bar = d_bar * slope

    carry = np.zeros_like(tape.hiddens[depth - 1])
    for layer in range(depth - 1, 0, -1):
        hidden = tape.hiddens[layer]
        total = carry + (injected[layer] if injected[layer] is not None else 0.0)
        pre_bar = total * (1.0 - hidden * hidden)
        weight_grads[layer - 1] += tape.hiddens[layer - 1].T @ pre_bar
        bias_grads[layer - 1] += pre_bar.sum(axis=0)
        carry = pre_bar @ weights[layer - 1].T

    return MLPParams(
        weights=tuple(weight_grads),
        biases=tuple(bias_grads),
        output_activation=params.output_activation,
    )


def init_params(
    config: GeneratorConfig | DiscriminatorConfig | Sequence[int],
    rng: Rng,
    output_activation: OutputActivation = 'none',
) -> MLPParams:
    """Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases."""
    dims = (
        tuple(config)
        if not isinstance(config, GeneratorConfig | DiscriminatorConfig)
        else config.layer_dims
    )
    if len(dims) < 2 or any(d < 1 for d in dims):  # noqa: PLR2004
        msg = f'invalid layer widths {dims}'
        raise InvalidArgumentError(msg)
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:], strict=True):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(
        weights=tuple(weights),
        biases=tuple(biases),
        output_activation=output_activation,
    )


def step_code(
    k: int,
    steps: int,
    count: int,
    encoding: StepEncoding = 'scalar',
) -> NDArray[np.float64]:
    """Encode step `k` as the scalar `k/T` or a one-hot vector over `0..T`."""
    if not 0 <= k <= steps:
        msg = f'step must lie in [0, {steps}], got {k}'
        raise InvalidArgumentError(msg)
    if encoding == 'scalar':
        return np.full((count, 1), k / steps)
    code = np.zeros((count, steps + 1))
    code[:, k] = 1.0
    return code


def _code_width(steps: int, encoding: StepEncoding) -> int:
    return 1 if encoding == 'scalar' else steps + 1


@dataclass(frozen=True)
class GeneratorConfig:
    """Shape of `G(y, k, z)`: input `data_dim + code + z_dim`, output `data_dim`."""

    data_dim: int
    z_dim: int
    steps: int
    hidden: int = 32
    depth: int = 3
    step_encoding: StepEncoding = 'scalar'

    @property
    def input_dim(self: GeneratorConfig) -> int:
        """Width of the concatenated input."""
        return self.data_dim + _code_width(self.steps, self.step_encoding) + self.z_dim

    @property
    def layer_dims(self: GeneratorConfig) -> tuple[int, ...]:
        """`depth` affine layers of width `hidden`."""
        return (self.input_dim, *[self.hidden] * (self.depth - 1), self.data_dim)


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Shape of `D(y, k)`: input `data_dim + code`, one logit out."""

    data_dim: int
    steps: int
    hidden: int = 32
    depth: int = 3
    step_encoding: StepEncoding = 'scalar'

    @property
    def input_dim(self: DiscriminatorConfig) -> int:
        """Width of the concatenated input."""
        return self.data_dim + _code_width(self.steps, self.step_encoding)

    @property
    def layer_dims(self: DiscriminatorConfig) -> tuple[int, ...]:
        """`depth` affine layers of width `hidden`."""
        return (self.input_dim, *[self.hidden] * (self.depth - 1), 1)


def _check_schedule(
    config: GeneratorConfig | DiscriminatorConfig,
    schedule: DegradationSchedule,
) -> None:
    if config.steps != schedule.total_steps or config.data_dim != schedule.data_dim:
        msg = (
            f'network built for T={config.steps}, dim={config.data_dim}; schedule has '
            f'T={schedule.total_steps}, dim={schedule.data_dim}'
        )
        raise ScheduleMismatchError(msg)


@dataclass(frozen=True)
class Generator:
    """`G_theta(y_k, k, z)`."""

    params: MLPParams
    config: GeneratorConfig


@dataclass(frozen=True)
class Discriminator:
    """`D_phi(y, k)`, a raw logit."""

    params: MLPParams
    config: DiscriminatorConfig


def generator_inputs(
    config: GeneratorConfig,
    schedule: DegradationSchedule,
    y_k: NDArray[np.float64],
    k: int,
    z: NDArray[np.float64] | None,
) -> NDArray[np.float64]:
    """Build the row batch `concat(lift(y_k), step_code(k), z)`."""
    _check_schedule(config, schedule)
    schedule.check_dim(k, y_k, 'y_k')
    batch, _ = as_batch(y_k)
    count = batch.shape[0]
    parts = [
        schedule.step(k).lift(batch),
        step_code(k, config.steps, count, config.step_encoding),
    ]
    if config.z_dim:
        if z is None:
            msg = f'the generator expects z of width {config.z_dim}'
            raise InvalidArgumentError(msg)
        z_batch, _ = as_batch(z)
        if z_batch.shape != (count, config.z_dim):
            msg = f'z has shape {z_batch.shape}, expected {(count, config.z_dim)}'
            raise InvalidArgumentError(msg)
        parts.append(z_batch)
    return np.concatenate(parts, axis=1)


def generator_forward(
    generator: Generator,
    y_k: NDArray[np.float64],
    k: int,
    z: NDArray[np.float64] | None,
    schedule: DegradationSchedule,
) -> tuple[NDArray[np.float64], Tape]:
    """Restore `x_hat = G(y_k, k, z)` and keep the tape."""
    inputs = generator_inputs(generator.config, schedule, y_k, k, z)
    output, tape = mlp_forward(generator.params, inputs)
    was_vector = np.ndim(y_k) == 1
    return (output[0] if was_vector else output), tape


def generator_apply(
    generator: Generator,
    y_k: NDArray[np.float64],
    k: int,
    z: NDArray[np.float64] | None,
    schedule: DegradationSchedule,
) -> NDArray[np.float64]:
    """Restore `x_hat = G(y_k, k, z)` in data space."""
    output, _ = generator_forward(generator, y_k, k, z, schedule)
    return output


def discriminator_forward(
    discriminator: Discriminator,
    y: NDArray[np.float64],
    k: int,
    schedule: DegradationSchedule,
) -> tuple[NDArray[np.float64], Tape]:
    """Logits of `D(y, k)` for a batch, shape `(n,)`, and the tape."""
    config = discriminator.config
    _check_schedule(config, schedule)
    schedule.check_dim(k, y, 'y')
    batch, _ = as_batch(y)
    inputs = np.concatenate(
        [
            schedule.step(k).lift(batch),
            step_code(k, config.steps, batch.shape[0], config.step_encoding),
        ],
        axis=1,
    )
    output, tape = mlp_forward(discriminator.params, inputs)
    return output[:, 0], tape


def discriminator_apply(
    discriminator: Discriminator,
    y: NDArray[np.float64],
    k: int,
    schedule: DegradationSchedule,
) -> NDArray[np.float64] | float:
    """Raw logit of `D(y, k)`; a float for a single vector."""
    logits, _ = discriminator_forward(discriminator, y, k, schedule)
    return float(logits[0]) if np.ndim(y) == 1 else logits


def discriminator_backward(
    discriminator: Discriminator,
    tape: Tape,
    logit_grad: NDArray[np.float64],
    k: int,
    schedule: DegradationSchedule,
) -> tuple[MLPParams, NDArray[np.float64]]:
    """Gradients of `sum logit_grad * logits` w.r.t. parameters and step-k input."""
    params_grad, input_grad = mlp_backward(tape, logit_grad[:, np.newaxis])
    data_dim = discriminator.config.data_dim
    return params_grad, schedule.step(k).lift_adjoint(input_grad[:, :data_dim])


__all__ = (
    'Discriminator',
    'DiscriminatorConfig',
    'Generator',
    'GeneratorConfig',
    'MLPParams',
    'OutputActivation',
    'Tape',
    'discriminator_apply',
    'discriminator_backward',
    'discriminator_forward',
    'generator_apply',
    'generator_forward',
    'generator_inputs',
    'init_params',
    'mlp_backward',
    'mlp_forward',
    'mlp_input_grad',
    'mlp_input_grad_vjp',
    'step_code',
)
