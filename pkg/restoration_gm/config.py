"""Configuration documents of restoration-gm and the process-wide runtime setup.

Experiment files are JSON documents mirroring `TrainConfig`. Missing keys fall back
to the defaults in `restoration_gm.constants`, which read `RGM_*` environment
variables.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import cache, wraps
from pathlib import Path
from typing import (
    TYPE_CHECKING,
    Literal,
    NoReturn,
    NotRequired,
    ParamSpec,
    TypedDict,
    TypeVar,
    cast,
)

from restoration_gm.constants import (
    ALGORITHM,
    BATCH_SIZE,
    BETA_MAX,
    BETA_MIN,
    DEPTH,
    DSWD_ITERATIONS,
    DSWD_LAMBDA_C,
    DSWD_LR,
    DSWD_NUM_PROJECTIONS,
    HIDDEN,
    IS_DEBUG_MODE,
    ITERATIONS,
    LAMBDA,
    LOG_EVERY,
    LOG_FILE,
    LR_D,
    LR_G,
    MMD_BANDWIDTHS,
    PRIOR_KIND,
    R1_GAMMA,
    SEED,
    STEP_ENCODING,
    Z_MODE,
)
from restoration_gm.errors import ConfigError, RestorationGMError
from restoration_gm.logger import add_file_handler, add_stdout_handler, set_verbosity
from restoration_gm.utils import config_hash, read_json, write_json

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping

ScheduleKind = Literal['d', 'd-quartic', 'sr-naive', 'sr']
Algorithm = Literal['posterior', 'relaxed', 'mmse', 'direct']
PriorKind = Literal['kld', 'mmd', 'dswd']
StepEncoding = Literal['scalar', 'onehot']
ZMode = Literal['gaussian', 'zero']
DatasetKind = Literal['gmm8', 'toy-images']
ImageFamily = Literal['blobs', 'gradients', 'checkerboards']

P = ParamSpec('P')
R = TypeVar('R')

SCHEDULE_KINDS: tuple[ScheduleKind, ...] = ('d', 'd-quartic', 'sr-naive', 'sr')
ALGORITHMS: tuple[Algorithm, ...] = ('posterior', 'relaxed', 'mmse', 'direct')
PRIOR_KINDS: tuple[PriorKind, ...] = ('kld', 'mmd', 'dswd')


class ScheduleDescriptor(TypedDict):
    """Identify a degradation schedule.

    Attributes
    ----------
    kind: `'d' | 'd-quartic' | 'sr-naive' | 'sr'`
        Forward-process family.
    steps: `int`
        Number of degradation steps `T`.
    data_shape: `list[int]`
        Shape of one data point, `(H, W, C)` for images or `(d,)` for vectors.
    beta_max: `float`, optional
    beta_min: `float`, optional

    """

    kind: ScheduleKind
    steps: int
    data_shape: list[int]
    beta_max: NotRequired[float]
    beta_min: NotRequired[float]


class PriorConfig(TypedDict):
    """Select and parameterize the prior term.

    Attributes
    ----------
    kind: `'kld' | 'mmd' | 'dswd'`
    bandwidths: `list[float]`, optional
        RBF bandwidths of the MMD kernel mixture.
    num_projections: `int`, optional
        Number of slicing directions of DSWD.
    dsw_iterations: `int`, optional
        Ascent steps of the DSWD projection sampler per update.
    lambda_c: `float`, optional
        Weight of the DSWD direction-diversity regularizer.
    sampler_lr: `float`, optional
        Adam learning rate of the DSWD projection sampler.
    feature_dim: `int`, optional
        When positive, DSWD compares batches in a frozen random feature space of
        this width.

    """

    kind: PriorKind
    bandwidths: NotRequired[list[float]]
    num_projections: NotRequired[int]
    dsw_iterations: NotRequired[int]
    lambda_c: NotRequired[float]
    sampler_lr: NotRequired[float]
    feature_dim: NotRequired[int]


class DatasetConfig(TypedDict):
    """Describe the training dataset of an experiment file.

    Attributes
    ----------
    kind: `'gmm8' | 'toy-images'`
    size: `int`
        Number of points or images.
    seed: `int`, optional
    family: `'blobs' | 'gradients' | 'checkerboards'`, optional
    channels: `int`, optional
    image_size: `int`, optional
    standardize: `bool`, optional

    """

    kind: DatasetKind
    size: int
    seed: NotRequired[int]
    family: NotRequired[ImageFamily]
    channels: NotRequired[int]
    image_size: NotRequired[int]
    standardize: NotRequired[bool]


class TrainConfig(TypedDict):
    """Everything the training algorithms leave as a requirement.

    Attributes
    ----------
    schedule: `ScheduleDescriptor`
    algorithm: `'posterior' | 'relaxed' | 'mmse' | 'direct'`, optional
    prior: `PriorConfig`, optional
    lambda_: `float | 'inf'`, optional
        Regularization weight; the generator loss weights fidelity by `1/lambda_`.
    lr_g: `float`, optional
    lr_d: `float`, optional
    batch_size: `int`, optional
    iterations: `int`, optional
    seed: `int`, optional
    r1_gamma: `float`, optional
    log_every: `int`, optional
    hidden: `int`, optional
    depth: `int`, optional
    z_dim: `int`, optional
        Width of the auxiliary variable, defaults to the data dimension.
    z_mode: `'gaussian' | 'zero'`, optional
    step_encoding: `'scalar' | 'onehot'`, optional
    dataset: `DatasetConfig`, optional

    """

    schedule: ScheduleDescriptor
    algorithm: NotRequired[Algorithm]
    prior: NotRequired[PriorConfig]
    lambda_: NotRequired[float | str]
    lr_g: NotRequired[float]
    lr_d: NotRequired[float]
    batch_size: NotRequired[int]
    iterations: NotRequired[int]
    seed: NotRequired[int]
    r1_gamma: NotRequired[float]
    log_every: NotRequired[int]
    hidden: NotRequired[int]
    depth: NotRequired[int]
    z_dim: NotRequired[int]
    z_mode: NotRequired[ZMode]
    step_encoding: NotRequired[StepEncoding]
    dataset: NotRequired[DatasetConfig]


@dataclass(frozen=True)
class ResolvedPrior:
    """`PriorConfig` with every default filled in."""

    kind: PriorKind = cast('PriorKind', PRIOR_KIND)
    bandwidths: tuple[float, ...] = MMD_BANDWIDTHS
    num_projections: int = DSWD_NUM_PROJECTIONS
    dsw_iterations: int = DSWD_ITERATIONS
    lambda_c: float = DSWD_LAMBDA_C
    sampler_lr: float = DSWD_LR
    feature_dim: int = 0


@dataclass(frozen=True)
class ResolvedTrainConfig:
    """`TrainConfig` with every default filled in and invariants checked."""

    schedule: ScheduleDescriptor
    algorithm: Algorithm = cast('Algorithm', ALGORITHM)
    prior: ResolvedPrior = field(default_factory=ResolvedPrior)
    lambda_: float = LAMBDA
    lr_g: float = LR_G
    lr_d: float = LR_D
    batch_size: int = BATCH_SIZE
    iterations: int = ITERATIONS
    seed: int = SEED
    r1_gamma: float = R1_GAMMA
    log_every: int = LOG_EVERY
    hidden: int = HIDDEN
    depth: int = DEPTH
    z_dim: int = 0
    z_mode: ZMode = cast('ZMode', Z_MODE)
    step_encoding: StepEncoding = cast('StepEncoding', STEP_ENCODING)
    dataset: DatasetConfig | None = None

    @property
    def fidelity_weight(self: ResolvedTrainConfig) -> float:
        """Return `1/lambda`, zero when the fidelity term is switched off."""
        return 0.0 if math.isinf(self.lambda_) else 1.0 / self.lambda_

    def to_document(self: ResolvedTrainConfig) -> dict[str, object]:
        """Return the JSON document describing this configuration."""
        document = asdict(self)
        document['prior']['bandwidths'] = list(self.prior.bandwidths)
        document['lambda_'] = 'inf' if math.isinf(self.lambda_) else self.lambda_
        if self.dataset is None:
            del document['dataset']
        return document

    def digest(self: ResolvedTrainConfig) -> str:
        """Return the configuration hash stamped on every artifact."""
        return config_hash(self.to_document())


def _fail(msg: str) -> NoReturn:
    raise ConfigError(msg)


def _malformed_as_config_error(
    function: Callable[P, R],
) -> Callable[P, R]:
    @wraps(function)
    def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
        try:
            return function(*args, **kwargs)
        except RestorationGMError:
            raise
        except (TypeError, ValueError) as exception:
            msg = f'malformed configuration value: {exception}'
            raise ConfigError(msg) from exception

    return wrapper


def _choice(value: object, allowed: tuple[str, ...], name: str) -> str:
    if value not in allowed:
        _fail(f'{name} must be one of {allowed}, got {value!r}')
    return cast('str', value)


def _positive(value: float, name: str) -> None:
    if not value > 0:
        _fail(f'{name} must be positive, got {value}')


def _parse_lambda(value: float | str) -> float:
    if isinstance(value, str):
        if value.lower() in ('inf', 'infinity'):
            return math.inf
        try:
            return float(value)
        except ValueError:
            _fail(f'lambda_ must be a number or "inf", got {value!r}')
    return float(value)


@_malformed_as_config_error
def resolve_schedule(descriptor: Mapping[str, object]) -> ScheduleDescriptor:
    """Validate a schedule descriptor and fill its beta defaults."""
    if 'kind' not in descriptor or 'steps' not in descriptor:
        _fail('schedule needs "kind" and "steps"')
    kind = _choice(descriptor['kind'], SCHEDULE_KINDS, 'schedule.kind')
    steps = int(cast('int', descriptor['steps']))
    if steps < 1:
        _fail(f'schedule.steps must be at least 1, got {steps}')
    shape = [int(d) for d in cast('list[int]', descriptor.get('data_shape', [2]))]
    if not shape or any(d < 1 for d in shape):
        _fail(f'schedule.data_shape must hold positive sizes, got {shape}')
    beta_max = float(cast('float', descriptor.get('beta_max', BETA_MAX)))
    beta_min = float(cast('float', descriptor.get('beta_min', BETA_MIN)))
    if not beta_max > beta_min > 0:
        _fail(f'need beta_max > beta_min > 0, got {beta_max}, {beta_min}')
    return {
        'kind': cast('ScheduleKind', kind),
        'steps': steps,
        'data_shape': shape,
        'beta_max': beta_max,
        'beta_min': beta_min,
    }


@_malformed_as_config_error
def resolve_prior(prior: Mapping[str, object] | None) -> ResolvedPrior:
    """Fill the defaults of a prior configuration."""
    if prior is None:
        return ResolvedPrior()
    defaults = ResolvedPrior()
    resolved = ResolvedPrior(
        kind=cast(
            'PriorKind',
            _choice(prior.get('kind', defaults.kind), PRIOR_KINDS, 'prior.kind'),
        ),
        bandwidths=tuple(
            float(b)
            for b in cast('list[float]', prior.get('bandwidths', defaults.bandwidths))
        ),
        num_projections=int(
            cast('int', prior.get('num_projections', defaults.num_projections)),
        ),
        dsw_iterations=int(
            cast('int', prior.get('dsw_iterations', defaults.dsw_iterations)),
        ),
        lambda_c=float(cast('float', prior.get('lambda_c', defaults.lambda_c))),
        sampler_lr=float(cast('float', prior.get('sampler_lr', defaults.sampler_lr))),
        feature_dim=int(cast('int', prior.get('feature_dim', defaults.feature_dim))),
    )
    if not resolved.bandwidths or any(b <= 0 for b in resolved.bandwidths):
        _fail(f'prior.bandwidths must be positive, got {resolved.bandwidths}')
    if resolved.num_projections < 1:
        _fail('prior.num_projections must be at least 1')
    if resolved.dsw_iterations < 0 or resolved.lambda_c < 0:
        _fail('prior.dsw_iterations and prior.lambda_c must be non-negative')
    _positive(resolved.sampler_lr, 'prior.sampler_lr')
    return resolved


@_malformed_as_config_error
def resolve_train_config(config: Mapping[str, object]) -> ResolvedTrainConfig:
    """Fill defaults into a `TrainConfig` document and check its invariants.

    The posterior-sampling requirement (every step decomposable) is checked by
    `restoration_gm.training`, which owns the schedule algebra.
    """
    if 'schedule' not in config:
        _fail('a training configuration needs a "schedule"')
    schedule = resolve_schedule(cast('Mapping[str, object]', config['schedule']))
    algorithm = cast(
        'Algorithm',
        _choice(config.get('algorithm', ALGORITHM), ALGORITHMS, 'algorithm'),
    )
    lambda_ = _parse_lambda(cast('float | str', config.get('lambda_', LAMBDA)))
    if algorithm != 'mmse':
        _positive(lambda_, 'lambda_')
    data_dim = math.prod(schedule['data_shape'])
    resolved = ResolvedTrainConfig(
        schedule=schedule,
        algorithm=algorithm,
        prior=resolve_prior(cast('Mapping[str, object] | None', config.get('prior'))),
        lambda_=lambda_,
        lr_g=float(cast('float', config.get('lr_g', LR_G))),
        lr_d=float(cast('float', config.get('lr_d', LR_D))),
        batch_size=int(cast('int', config.get('batch_size', BATCH_SIZE))),
        iterations=int(cast('int', config.get('iterations', ITERATIONS))),
        seed=int(cast('int', config.get('seed', SEED))),
        r1_gamma=float(cast('float', config.get('r1_gamma', R1_GAMMA))),
        log_every=int(cast('int', config.get('log_every', LOG_EVERY))),
        hidden=int(cast('int', config.get('hidden', HIDDEN))),
        depth=int(cast('int', config.get('depth', DEPTH))),
        z_dim=0
        if algorithm == 'mmse'
        else int(cast('int', config.get('z_dim', data_dim))),
        z_mode=cast(
            'ZMode',
            _choice(config.get('z_mode', Z_MODE), ('gaussian', 'zero'), 'z_mode'),
        ),
        step_encoding=cast(
            'StepEncoding',
            _choice(
                config.get('step_encoding', STEP_ENCODING),
                ('scalar', 'onehot'),
                'step_encoding',
            ),
        ),
        dataset=cast('DatasetConfig | None', config.get('dataset')),
    )
    _positive(resolved.lr_g, 'lr_g')
    _positive(resolved.lr_d, 'lr_d')
    _positive(resolved.batch_size, 'batch_size')
    _positive(resolved.log_every, 'log_every')
    _positive(resolved.hidden, 'hidden')
    _positive(resolved.depth, 'depth')
    if resolved.iterations < 0:
        _fail(f'iterations must be non-negative, got {resolved.iterations}')
    if resolved.r1_gamma < 0:
        _fail(f'r1_gamma must be non-negative, got {resolved.r1_gamma}')
    if resolved.z_dim < 0:
        _fail(f'z_dim must be non-negative, got {resolved.z_dim}')
    return resolved


def load_train_config(path: Path) -> ResolvedTrainConfig:
    """Read and resolve a JSON experiment file."""
    document = read_json(path)
    if not isinstance(document, dict):
        _fail(f'{path} does not hold a JSON object')
    return resolve_train_config(cast('dict[str, object]', document))


def dump_train_config(config: ResolvedTrainConfig, path: Path) -> None:
    """Write the resolved configuration as a JSON experiment file."""
    write_json(path, config.to_document())


class RuntimeConfig(TypedDict):
    """Arguments of `setup_restoration_gm`.

    Attributes
    ----------
    is_debug_mode: `bool`, optional
        Log at debug level to stdout and to the log file.
    log_file: `str`, optional
        Path of a log file; empty disables file logging outside debug mode.
    verbosity: `int`, optional
        Number of `-v` flags given on the command line.

    """

    is_debug_mode: NotRequired[bool]
    log_file: NotRequired[str]
    verbosity: NotRequired[int]


_config: RuntimeConfig | None = None


def report_uninitialized() -> NoReturn:
    """Report that the runtime has not been set up."""
    msg = 'You need to run `setup_restoration_gm` before reading runtime settings.'
    raise RuntimeError(msg)


def setup_restoration_gm(config: RuntimeConfig) -> None:
    """Configure logging and the process-wide runtime settings."""
    global _config  # noqa: PLW0603
    _config = config
    for accessor in (is_debug_mode, log_file, verbosity):
        accessor.cache_clear()

    add_stdout_handler()
    set_verbosity(max(verbosity(), 1 if is_debug_mode() else 0))
    if log_file():
        add_file_handler(log_file())
    elif is_debug_mode():
        add_file_handler()


@cache
def is_debug_mode() -> bool:
    """Return `True` if debug information should be logged."""
    if _config is not None:
        return _config.get('is_debug_mode', IS_DEBUG_MODE)
    report_uninitialized()


@cache
def log_file() -> str:
    """Return the path of the log file, empty when file logging is off."""
    if _config is not None:
        return _config.get('log_file', LOG_FILE)
    report_uninitialized()


@cache
def verbosity() -> int:
    """Return the number of `-v` flags."""
    if _config is not None:
        return _config.get('verbosity', 0)
    report_uninitialized()
