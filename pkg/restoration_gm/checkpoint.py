"""Versioned JSON checkpoints.

Arrays are stored as `{"shape": [...], "data": [...]}` with Python float reprs,
which JSON reads back bit-exactly.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, cast

import numpy as np

from restoration_gm.config import ResolvedPrior, resolve_schedule
from restoration_gm.constants import CHECKPOINT_VERSION
from restoration_gm.errors import (
    CheckpointError,
    CheckpointVersionError,
    CorruptCheckpointError,
    ScheduleMismatchError,
)
from restoration_gm.logger import logger
from restoration_gm.neural import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    MLPParams,
)
from restoration_gm.numerics import AdamState
from restoration_gm.priors import DSWDPrior, KLDPrior, MMDPrior, SamplerState

if TYPE_CHECKING:
    from numpy.typing import NDArray

    from restoration_gm.config import ScheduleDescriptor
    from restoration_gm.priors import Prior


@dataclass(frozen=True, eq=False)
class Checkpoint:
    """Everything needed to sample from a model or to resume its training."""

    schedule: ScheduleDescriptor
    generator: Generator
    algorithm: str
    iteration: int
    seed: int
    prior: Prior | None = None
    generator_optimizer: AdamState | None = None
    rng_state: dict[str, Any] | None = None
    config: dict[str, Any] | None = None
    version: int = CHECKPOINT_VERSION


def _encode_array(array: NDArray[np.float64]) -> dict[str, Any]:
    return {'shape': list(array.shape), 'data': array.reshape(-1).tolist()}


def _decode_array(document: dict[str, Any]) -> NDArray[np.float64]:
    return np.asarray(document['data'], dtype=np.float64).reshape(document['shape'])


def _encode_params(params: MLPParams) -> dict[str, Any]:
    return {
        'output_activation': params.output_activation,
        'layers': [
            {'weight': _encode_array(w), 'bias': _encode_array(b)}
            for w, b in zip(params.weights, params.biases, strict=True)
        ],
    }


def _decode_params(document: dict[str, Any]) -> MLPParams:
    layers = document['layers']
    return MLPParams(
        weights=tuple(_decode_array(layer['weight']) for layer in layers),
        biases=tuple(_decode_array(layer['bias']) for layer in layers),
        output_activation=document['output_activation'],
    )


def _encode_adam(state: AdamState) -> dict[str, Any]:
    return {
        'm': [_encode_array(m) for m in state.m],
        'v': [_encode_array(v) for v in state.v],
        't': state.t,
        'lr': state.lr,
        'beta1': state.beta1,
        'beta2': state.beta2,
        'eps': state.eps,
        'steps_per_tensor': list(state.steps_per_tensor),
    }


def _decode_adam(document: dict[str, Any]) -> AdamState:
    return AdamState(
        m=tuple(_decode_array(m) for m in document['m']),
        v=tuple(_decode_array(v) for v in document['v']),
        t=int(document['t']),
        lr=float(document['lr']),
        beta1=float(document['beta1']),
        beta2=float(document['beta2']),
        eps=float(document['eps']),
        steps_per_tensor=tuple(int(c) for c in document['steps_per_tensor']),
    )


def _encode_prior(prior: Prior) -> dict[str, Any]:
    if isinstance(prior, KLDPrior):
        return {
            'kind': prior.kind,
            'discriminator': {
                'config': asdict(prior.discriminator.config),
                'params': _encode_params(prior.discriminator.params),
            },
            'optimizer': _encode_adam(prior.optimizer),
            'r1_gamma': prior.r1_gamma,
        }
    if isinstance(prior, MMDPrior):
        return {'kind': prior.kind, 'bandwidths': list(prior.bandwidths)}
    settings = asdict(prior.settings)
    settings['bandwidths'] = list(prior.settings.bandwidths)
    return {
        'kind': prior.kind,
        'settings': settings,
        'sampler': {
            'params': _encode_params(prior.sampler.params),
            'optimizer': _encode_adam(prior.sampler.optimizer),
        },
        'feature_map': None
        if prior.feature_map is None
        else _encode_params(prior.feature_map),
        'directions': {
            str(k): _encode_array(directions)
            for k, directions in prior.directions.items()
        },
    }


def _decode_prior(document: dict[str, Any]) -> Prior:
    kind = document['kind']
    if kind == 'kld':
        return KLDPrior(
            discriminator=Discriminator(
                params=_decode_params(document['discriminator']['params']),
                config=DiscriminatorConfig(**document['discriminator']['config']),
            ),
            optimizer=_decode_adam(document['optimizer']),
            r1_gamma=float(document['r1_gamma']),
        )
    if kind == 'mmd':
        return MMDPrior(bandwidths=tuple(float(b) for b in document['bandwidths']))
    if kind == 'dswd':
        settings = dict(document['settings'])
        settings['bandwidths'] = tuple(settings['bandwidths'])
        return DSWDPrior(
            settings=ResolvedPrior(**settings),
            sampler=SamplerState(
                params=_decode_params(document['sampler']['params']),
                optimizer=_decode_adam(document['sampler']['optimizer']),
            ),
            feature_map=None
            if document['feature_map'] is None
            else _decode_params(document['feature_map']),
            directions={
                int(k): _decode_array(directions)
                for k, directions in document.get('directions', {}).items()
            },
        )
    msg = f'unknown prior kind {kind!r}'
    raise ValueError(msg)


def checkpoint_to_document(checkpoint: Checkpoint) -> dict[str, Any]:
    """The JSON document written by `save_checkpoint`."""
    return {
        'version': checkpoint.version,
        'schedule': dict(checkpoint.schedule),
        'algorithm': checkpoint.algorithm,
        'iteration': checkpoint.iteration,
        'seed': checkpoint.seed,
        'shapes': {
            'generator': list(checkpoint.generator.params.layer_dims),
        },
        'generator': {
            'config': asdict(checkpoint.generator.config),
            'params': _encode_params(checkpoint.generator.params),
        },
        'generator_optimizer': None
        if checkpoint.generator_optimizer is None
        else _encode_adam(checkpoint.generator_optimizer),
        'prior': None if checkpoint.prior is None else _encode_prior(checkpoint.prior),
        'rng_state': checkpoint.rng_state,
        'config': checkpoint.config,
    }


def checkpoint_from_document(document: dict[str, Any]) -> Checkpoint:
    """Rebuild a checkpoint, checking the format version first."""
    version = document.get('version') if isinstance(document, dict) else None
    if version != CHECKPOINT_VERSION:
        msg = f'checkpoint version {version!r} is not {CHECKPOINT_VERSION}'
        raise CheckpointVersionError(msg)
    try:
        return Checkpoint(
            version=version,
            schedule=cast('ScheduleDescriptor', document['schedule']),
            algorithm=str(document['algorithm']),
            iteration=int(document['iteration']),
            seed=int(document['seed']),
            generator=Generator(
                params=_decode_params(document['generator']['params']),
                config=GeneratorConfig(**document['generator']['config']),
            ),
            generator_optimizer=None
            if document['generator_optimizer'] is None
            else _decode_adam(document['generator_optimizer']),
            prior=None
            if document['prior'] is None
            else _decode_prior(document['prior']),
            rng_state=document.get('rng_state'),
            config=document.get('config'),
        )
    except (KeyError, TypeError, ValueError) as exception:
        msg = f'checkpoint document is incomplete: {exception}'
        raise CorruptCheckpointError(msg) from exception


def save_checkpoint(checkpoint: Checkpoint, path: Path) -> None:
    """Write `checkpoint` to `path` as JSON."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(checkpoint_to_document(checkpoint)) + '\n')
    except OSError as exception:
        msg = f'cannot write checkpoint {path}: {exception}'
        raise CheckpointError(msg) from exception
    logger.info('saved checkpoint at iteration %d to %s', checkpoint.iteration, path)


def load_checkpoint(path: Path) -> Checkpoint:
    """Read a checkpoint written by `save_checkpoint`."""
    try:
        text = Path(path).read_text()
    except OSError as exception:
        msg = f'cannot read checkpoint {path}: {exception}'
        raise CheckpointError(msg) from exception
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exception:
        msg = f'checkpoint {path} is not valid JSON: {exception}'
        raise CorruptCheckpointError(msg) from exception
    return checkpoint_from_document(document)


def require_schedule(checkpoint: Checkpoint, descriptor: ScheduleDescriptor) -> None:
    """Raise unless `checkpoint` was trained on the schedule `descriptor`."""
    expected = resolve_schedule(cast('dict[str, object]', descriptor))
    actual = resolve_schedule(cast('dict[str, object]', checkpoint.schedule))
    if expected != actual:
        msg = f'checkpoint was trained on {actual}, not on {expected}'
        raise ScheduleMismatchError(msg)


__all__ = (
    'Checkpoint',
    'checkpoint_from_document',
    'checkpoint_to_document',
    'load_checkpoint',
    'require_schedule',
    'save_checkpoint',
)
