"""Generators, linear algebra, Adam and the finite-difference oracle."""

# ruff: noqa: D103
from __future__ import annotations

from typing import TYPE_CHECKING

import numpy as np
import pytest

from restoration_gm.errors import InvalidArgumentError, NumericalFailureError
from restoration_gm.numerics import (
    AdamState,
    adam_step,
    ensure_finite,
    finite_diff_grad,
    gaussian_batch,
    make_rng,
    pseudoinverse,
    restore_rng,
    rng_state,
    split_rng,
    svd,
)

if TYPE_CHECKING:
    from restoration_gm.numerics import Rng


def test_same_seed_same_stream() -> None:
    a = make_rng(7).standard_normal(16)
    b = make_rng(7).standard_normal(16)
    np.testing.assert_array_equal(a, b)


def test_split_streams_differ_and_are_reproducible() -> None:
    first, second = split_rng(make_rng(3), 2)
    again, _ = split_rng(make_rng(3), 2)
    x = first.standard_normal(8)
    assert not np.array_equal(x, second.standard_normal(8))
    np.testing.assert_array_equal(x, again.standard_normal(8))


def test_restored_state_continues_the_stream(rng: Rng) -> None:
    rng.standard_normal(5)
    state = rng_state(rng)
    expected = rng.standard_normal(5)
    np.testing.assert_array_equal(restore_rng(state).standard_normal(5), expected)


def test_gaussian_batch_shape_and_errors(rng: Rng) -> None:
    assert gaussian_batch(3, 4, rng).shape == (3, 4)
    with pytest.raises(InvalidArgumentError):
        gaussian_batch(-1, 4, rng)


def test_ensure_finite() -> None:
    ensure_finite(np.ones(3), 'ones')
    with pytest.raises(NumericalFailureError):
        ensure_finite(np.array([1.0, np.nan]), 'nan')


@pytest.mark.parametrize('shape', [(5, 3), (3, 5), (4, 4)])
def test_svd_reconstructs(rng: Rng, shape: tuple[int, int]) -> None:
    a = rng.standard_normal(shape)
    u, s, v = svd(a)
    np.testing.assert_allclose((u * s) @ v.T, a, atol=1e-12)
    assert np.all(np.diff(s) <= 0)


def test_pseudoinverse_penrose_conditions(rng: Rng) -> None:
    a = rng.standard_normal((6, 3)) @ rng.standard_normal((3, 5))
    p = pseudoinverse(a)
    np.testing.assert_allclose(a @ p @ a, a, atol=1e-10)
    np.testing.assert_allclose(p @ a @ p, p, atol=1e-10)
    np.testing.assert_allclose((a @ p).T, a @ p, atol=1e-10)
    np.testing.assert_allclose((p @ a).T, p @ a, atol=1e-10)
    np.testing.assert_allclose(p, np.linalg.pinv(a), atol=1e-10)


def test_pseudoinverse_of_zero_matrix() -> None:
    np.testing.assert_array_equal(pseudoinverse(np.zeros((2, 3))), np.zeros((3, 2)))


def test_adam_first_step_moves_by_lr() -> None:
    params = (np.array([1.0, -2.0]),)
    state = AdamState.zeros_like(params, lr=0.1)
    (updated,), state = adam_step(params, (np.array([0.5, -3.0]),), state)
    np.testing.assert_allclose(updated, [0.9, -1.9], atol=1e-6)
    assert state.t == 1
    assert state.steps_per_tensor == (1,)


def test_adam_skips_zero_gradients() -> None:
    params = (np.ones(2), np.ones(3))
    state = AdamState.zeros_like(params, lr=0.1)
    new, state = adam_step(params, (np.ones(2), np.ones(3)), state)
    newer, state = adam_step(new, (np.zeros(2), np.ones(3)), state)
    np.testing.assert_array_equal(newer[0], new[0])
    assert state.steps_per_tensor == (1, 2)


def test_adam_rejects_shape_mismatch() -> None:
    state = AdamState.zeros_like((np.ones(2),), lr=0.1)
    with pytest.raises(InvalidArgumentError):
        adam_step((np.ones(2),), (np.ones(3),), state)


def test_adam_rejects_non_finite_updates() -> None:
    state = AdamState.zeros_like((np.ones(2),), lr=0.1)
    with pytest.raises(NumericalFailureError):
        adam_step((np.ones(2),), (np.array([np.nan, 1.0]),), state)
    with pytest.raises(NumericalFailureError):
        adam_step((np.array([np.inf, 0.0]),), (np.ones(2),), state)


def test_finite_diff_grad_of_quadratic(rng: Rng) -> None:
    a = rng.standard_normal((4, 4))
    x = rng.standard_normal(4)
    grad = finite_diff_grad(lambda v: float(v @ a @ v), x)
    np.testing.assert_allclose(grad, (a + a.T) @ x, rtol=1e-6)
