"""Forward and reverse passes of the tanh networks."""

# ruff: noqa: D103
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from restoration_gm.degradation import build_schedule
from restoration_gm.errors import (
    InvalidArgumentError,
    InvalidStateError,
    ScheduleMismatchError,
)
from restoration_gm.neural import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    discriminator_apply,
    discriminator_backward,
    discriminator_forward,
    generator_apply,
    generator_forward,
    init_params,
    mlp_backward,
    mlp_forward,
    mlp_input_grad,
    mlp_input_grad_vjp,
    step_code,
)
from restoration_gm.numerics import finite_diff_grad

if TYPE_CHECKING:
    from restoration_gm.neural import MLPParams, OutputActivation
    from restoration_gm.numerics import Rng


def _loss_weights(rng: Rng, shape: tuple[int, ...]) -> np.ndarray:
    return rng.standard_normal(shape)


@pytest.mark.parametrize('activation', ['none', 'tanh'])
def test_parameter_gradient_matches_finite_differences(
    rng: Rng,
    activation: OutputActivation,
) -> None:
    params = init_params((3, 5, 4, 2), rng, output_activation=activation)
    inputs = rng.standard_normal((6, 3))
    weights = _loss_weights(rng, (6, 2))

    def loss(vector: np.ndarray) -> float:
        output, _ = mlp_forward(params.unflatten(vector), inputs)
        return float(np.sum(weights * output))

    _, tape = mlp_forward(params, inputs)
    grads, _ = mlp_backward(tape, weights)
    numeric = finite_diff_grad(loss, params.flatten())
    np.testing.assert_allclose(grads.flatten(), numeric, rtol=1e-5, atol=1e-8)


def test_input_gradient_matches_finite_differences(rng: Rng) -> None:
    params = init_params((4, 6, 3), rng)
    inputs = rng.standard_normal((2, 4))
    weights = _loss_weights(rng, (2, 3))
    _, tape = mlp_forward(params, inputs)
    _, input_grad = mlp_backward(tape, weights)
    numeric = finite_diff_grad(
        lambda x: float(np.sum(weights * mlp_forward(params, x)[0])),
        inputs,
    )
    np.testing.assert_allclose(input_grad, numeric, rtol=1e-5, atol=1e-8)


def test_vector_input_round_trips_shape(rng: Rng) -> None:
    params = init_params((3, 4, 2), rng)
    output, tape = mlp_forward(params, np.ones(3))
    assert output.shape == (2,)
    _, input_grad = mlp_backward(tape, np.ones(2))
    assert input_grad.shape == (3,)


def test_backward_rejects_mismatched_gradient(rng: Rng) -> None:
    params = init_params((3, 4, 2), rng)
    _, tape = mlp_forward(params, np.ones((5, 3)))
    with pytest.raises(InvalidStateError):
        mlp_backward(tape, np.ones((4, 2)))


def test_forward_rejects_wrong_width(rng: Rng) -> None:
    with pytest.raises(InvalidArgumentError):
        mlp_forward(init_params((3, 2), rng), np.ones((1, 4)))


def _scalar_net(rng: Rng) -> MLPParams:
    return init_params((3, 5, 4, 1), rng)


def test_scalar_input_gradient(rng: Rng) -> None:
    params = _scalar_net(rng)
    inputs = rng.standard_normal((4, 3))
    _, tape = mlp_forward(params, inputs)
    numeric = finite_diff_grad(
        lambda x: float(np.sum(mlp_forward(params, x)[0])),
        inputs,
    )
    np.testing.assert_allclose(mlp_input_grad(tape), numeric, rtol=1e-5, atol=1e-8)


def test_input_gradient_vjp_is_second_order_exact(rng: Rng) -> None:
    params = _scalar_net(rng)
    inputs = rng.standard_normal((4, 3))
    cotangent = rng.standard_normal((4, 3))

    def penalty(vector: np.ndarray) -> float:
        _, tape = mlp_forward(params.unflatten(vector), inputs)
        return float(np.sum(cotangent * mlp_input_grad(tape)))

    _, tape = mlp_forward(params, inputs)
    exact = mlp_input_grad_vjp(tape, cotangent).flatten()
    numeric = finite_diff_grad(penalty, params.flatten())
    np.testing.assert_allclose(exact, numeric, rtol=1e-5, atol=1e-8)


def test_input_gradient_needs_scalar_affine_output(rng: Rng) -> None:
    _, tape = mlp_forward(init_params((3, 2), rng), np.ones((1, 3)))
    with pytest.raises(InvalidStateError):
        mlp_input_grad(tape)


def test_step_code_encodings() -> None:
    np.testing.assert_array_equal(step_code(2, 4, 3), np.full((3, 1), 0.5))
    onehot = step_code(0, 4, 2, 'onehot')
    assert onehot.shape == (2, 5)
    np.testing.assert_array_equal(onehot[:, 0], [1.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        step_code(5, 4, 1)


def test_generator_restores_every_step_of_a_resolution_schedule(rng: Rng) -> None:
    schedule = build_schedule('sr-naive', 3, (8, 8, 1))
    config = GeneratorConfig(data_dim=64, z_dim=4, steps=3, hidden=16)
    generator = Generator(params=init_params(config, rng), config=config)
    for k in range(1, 4):
        y = rng.standard_normal((5, schedule.dim(k)))
        x_hat = generator_apply(generator, y, k, rng.standard_normal((5, 4)), schedule)
        assert x_hat.shape == (5, 64)


def test_generator_gradient_through_conditioning(rng: Rng) -> None:
    schedule = build_schedule('d', 4, (3,))
    config = GeneratorConfig(data_dim=3, z_dim=2, steps=4, hidden=8)
    generator = Generator(params=init_params(config, rng), config=config)
    y = rng.standard_normal((3, 3))
    z = rng.standard_normal((3, 2))
    weights = rng.standard_normal((3, 3))

    def loss(vector: np.ndarray) -> float:
        shifted = Generator(params=generator.params.unflatten(vector), config=config)
        return float(np.sum(weights * generator_apply(shifted, y, 2, z, schedule)))

    _, tape = generator_forward(generator, y, 2, z, schedule)
    grads, _ = mlp_backward(tape, weights)
    numeric = finite_diff_grad(loss, generator.params.flatten())
    np.testing.assert_allclose(grads.flatten(), numeric, rtol=1e-5, atol=1e-8)


def test_generator_requires_z(rng: Rng) -> None:
    schedule = build_schedule('d', 2, (2,))
    config = GeneratorConfig(data_dim=2, z_dim=2, steps=2)
    generator = Generator(params=init_params(config, rng), config=config)
    with pytest.raises(InvalidArgumentError):
        generator_apply(generator, np.ones((1, 2)), 1, None, schedule)


def test_network_rejects_other_schedule(rng: Rng) -> None:
    config = DiscriminatorConfig(data_dim=2, steps=4)
    discriminator = Discriminator(params=init_params(config, rng), config=config)
    with pytest.raises(ScheduleMismatchError):
        discriminator_apply(discriminator, np.ones(2), 1, build_schedule('d', 3, (2,)))


def test_discriminator_gradient_in_degraded_space(rng: Rng) -> None:
    schedule = build_schedule('sr-naive', 2, (4, 4, 1))
    config = DiscriminatorConfig(data_dim=16, steps=2, hidden=8)
    discriminator = Discriminator(params=init_params(config, rng), config=config)
    y = rng.standard_normal((3, schedule.dim(1)))
    weights = rng.standard_normal(3)
    logits, tape = discriminator_forward(discriminator, y, 1, schedule)
    assert logits.shape == (3,)
    _, y_grad = discriminator_backward(discriminator, tape, weights, 1, schedule)

    def weighted(v: np.ndarray) -> float:
        return float(weights @ discriminator_forward(discriminator, v, 1, schedule)[0])

    numeric = finite_diff_grad(weighted, y)
    np.testing.assert_allclose(y_grad, numeric, rtol=1e-5, atol=1e-8)
    assert isinstance(discriminator_apply(discriminator, y[0], 1, schedule), float)
