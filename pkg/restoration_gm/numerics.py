"""Dense float64 kernels shared by every other module.

Randomness always flows through an explicit `numpy.random.Generator`; nothing in
the package touches the global numpy random state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from restoration_gm.constants import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    PINV_TOL,
)
from restoration_gm.errors import InvalidArgumentError, NumericalFailureError

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from numpy.typing import NDArray

Rng = np.random.Generator


class Evaluation(NamedTuple):
    """A scalar objective value together with its gradient w.r.t. one argument."""

    value: float
    grad: NDArray[np.float64]


def make_rng(seed: int | Sequence[int]) -> Rng:
    """Return a PCG64 generator; identical seeds give identical draw sequences."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def split_rng(rng: Rng, count: int) -> list[Rng]:
    """Split `rng` into `count` independent, non-overlapping child streams."""
    if count < 1:
        msg = f'count must be positive, got {count}'
        raise InvalidArgumentError(msg)
    return list(rng.spawn(count))


def rng_state(rng: Rng) -> dict[str, object]:
    """Return the JSON-compatible bit-generator state of `rng`."""
    return rng.bit_generator.state


def restore_rng(state: dict[str, object]) -> Rng:
    """Rebuild a generator positioned exactly at `state`."""
    bit_generator = np.random.PCG64()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def gaussian_vector(dim: int, rng: Rng) -> NDArray[np.float64]:
    """Draw `dim` i.i.d. standard normal values."""
    if dim < 1:
        msg = f'dim must be at least 1, got {dim}'
        raise InvalidArgumentError(msg)
    return rng.standard_normal(dim)


def gaussian_batch(count: int, dim: int, rng: Rng) -> NDArray[np.float64]:
    """Draw a `(count, dim)` matrix of standard normal values, row by row."""
    if count < 0 or dim < 0:
        msg = f'batch shape must be non-negative, got ({count}, {dim})'
        raise InvalidArgumentError(msg)
    return rng.standard_normal((count, dim))


def ensure_finite(array: NDArray[np.float64] | float, what: str) -> None:
    """Raise `NumericalFailureError` when `array` holds NaN or infinity."""
    if not np.all(np.isfinite(array)):
        msg = f'non-finite values in {what}'
        raise NumericalFailureError(msg)


def as_matrix(a: NDArray[np.float64], what: str = 'matrix') -> NDArray[np.float64]:
    """Validate a 2-D finite float64 matrix."""
    matrix = np.asarray(a, dtype=np.float64)
    if matrix.ndim != 2:  # noqa: PLR2004
        msg = f'{what} must be 2-D, got shape {matrix.shape}'
        raise InvalidArgumentError(msg)
    if not np.all(np.isfinite(matrix)):
        msg = f'{what} has non-finite entries'
        raise InvalidArgumentError(msg)
    return matrix


def svd(
    a: NDArray[np.float64],
) -> tuple[NDArray[np.float64], NDArray[np.float64], NDArray[np.float64]]:
    """Thin SVD `A = U diag(S) V^T` with non-increasing singular values.

    Returns `(U, S, V)`, note `V` and not `V^T`.
    """
    matrix = as_matrix(a)
    try:
        u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    except np.linalg.LinAlgError as exception:
        msg = f'SVD did not converge for a {matrix.shape} matrix'
        raise NumericalFailureError(msg) from exception
    return u, s, vt.T


def pseudoinverse(
    a: NDArray[np.float64],
    tol: float = PINV_TOL,
) -> NDArray[np.float64]:
    """Moore-Penrose pseudoinverse, zeroing singular values `<= tol * max(S)`."""
    if tol < 0:
        msg = f'tol must be non-negative, got {tol}'
        raise InvalidArgumentError(msg)
    u, s, v = svd(a)
    if s.size == 0:
        return np.zeros((a.shape[1], a.shape[0]))
    cutoff = tol * s[0]
    inverse = np.zeros_like(s)
    keep = s > cutoff
    inverse[keep] = 1.0 / s[keep]
    return (v * inverse) @ u.T


@dataclass(frozen=True)
class AdamState:
    """Moments, step counter and hyper-parameters of an Adam optimizer."""

    m: tuple[NDArray[np.float64], ...]
    v: tuple[NDArray[np.float64], ...]
    t: int = 0
    lr: float = 1e-4
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    steps_per_tensor: tuple[int, ...] = field(default=())

    @classmethod
    def zeros_like(
        cls: type[AdamState],
        params: Sequence[NDArray[np.float64]],
        *,
        lr: float,
        beta1: float = ADAM_BETA1,
        beta2: float = ADAM_BETA2,
        eps: float = ADAM_EPS,
    ) -> AdamState:
        """Create a fresh state matching the shapes of `params`."""
        if lr <= 0:
            msg = f'lr must be positive, got {lr}'
            raise InvalidArgumentError(msg)
        return cls(
            m=tuple(np.zeros_like(p, dtype=np.float64) for p in params),
            v=tuple(np.zeros_like(p, dtype=np.float64) for p in params),
            t=0,
            lr=lr,
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            steps_per_tensor=tuple(0 for _ in params),
        )


def adam_step(
    params: Sequence[NDArray[np.float64]],
    grads: Sequence[NDArray[np.float64]],
    state: AdamState,
) -> tuple[tuple[NDArray[np.float64], ...], AdamState]:
    """Apply one bias-corrected Adam update.

    A tensor whose gradient is identically zero takes no part in the step: its
    value and moments are left as they are, so zero gradients never move
    parameters regardless of the accumulated moments. A non-finite gradient or
    update raises `NumericalFailureError`.
    """
    if not (len(params) == len(grads) == len(state.m)):
        msg = (
            f'expected {len(state.m)} tensors, got {len(params)} params and '
            f'{len(grads)} grads'
        )
        raise InvalidArgumentError(msg)
    if state.lr <= 0:
        msg = f'lr must be positive, got {state.lr}'
        raise InvalidArgumentError(msg)
    counters = state.steps_per_tensor or tuple(state.t for _ in params)

    new_params: list[NDArray[np.float64]] = []
    new_m: list[NDArray[np.float64]] = []
    new_v: list[NDArray[np.float64]] = []
    new_counters: list[int] = []
    rows = zip(params, grads, state.m, state.v, counters, strict=True)
    for index, (p, g, m, v, count) in enumerate(rows):
        if p.shape != g.shape or p.shape != m.shape:
            msg = f'shape mismatch: param {p.shape}, grad {g.shape}, moment {m.shape}'
            raise InvalidArgumentError(msg)
        if not np.any(g):
            new_params.append(p)
            new_m.append(m)
            new_v.append(v)
            new_counters.append(count)
            continue
        t = count + 1
        m_t = state.beta1 * m + (1.0 - state.beta1) * g
        v_t = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m_t / (1.0 - state.beta1**t)
        v_hat = v_t / (1.0 - state.beta2**t)
        updated = p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        ensure_finite(updated, f'the Adam update of tensor {index}')
        new_params.append(updated)
        new_m.append(m_t)
        new_v.append(v_t)
        new_counters.append(t)

    return tuple(new_params), AdamState(
        m=tuple(new_m),
        v=tuple(new_v),
        t=state.t + 1,
        lr=state.lr,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
        steps_per_tensor=tuple(new_counters),
    )


def finite_diff_grad(
    f: Callable[[NDArray[np.float64]], float],
    x: NDArray[np.float64],
    eps: float = 1e-6,
) -> NDArray[np.float64]:
    """Central-difference gradient of the scalar function `f` at `x`."""
    if eps <= 0:
        msg = f'eps must be positive, got {eps}'
        raise InvalidArgumentError(msg)
    point = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(point)
    flat_point = point.reshape(-1)
    flat_grad = grad.reshape(-1)
    for index in range(flat_point.size):
        original = flat_point[index]
        flat_point[index] = original + eps
        upper = float(f(point))
        flat_point[index] = original - eps
        lower = float(f(point))
        flat_point[index] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            msg = f'non-finite function value around coordinate {index}'
            raise NumericalFailureError(msg)
        flat_grad[index] = (upper - lower) / (2.0 * eps)
    return grad


__all__ = (
    'AdamState',
    'Evaluation',
    'Rng',
    'adam_step',
    'as_matrix',
    'ensure_finite',
    'finite_diff_grad',
    'gaussian_batch',
    'gaussian_vector',
    'make_rng',
    'pseudoinverse',
    'restore_rng',
    'rng_state',
    'split_rng',
    'svd',
)
