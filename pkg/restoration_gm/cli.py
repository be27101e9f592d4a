"""Command-line interface: `rgm schedule|train|sample|invert|eval|data`.

Every command writes its artifacts under `--out` with a `.meta.json` sidecar and
maps package errors to exit codes: 2 usage, 3 configuration or schedule mismatch,
4 numerical abort, 5 IO.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import TYPE_CHECKING, Any, cast

from restoration_gm.checkpoint import load_checkpoint
from restoration_gm.config import (
    SCHEDULE_KINDS,
    load_train_config,
    resolve_schedule,
    setup_restoration_gm,
)
from restoration_gm.constants import DENOISE_SIGMA, MMD_BANDWIDTHS, SR_FACTOR
from restoration_gm.degradation import is_decomposable, schedule_from_descriptor
from restoration_gm.errors import (
    EXIT_OK,
    InvalidArgumentError,
    RestorationGMError,
)
from restoration_gm.evaldata import (
    GMM8Spec,
    energy_distance,
    load_dataset,
    mode_coverage,
    read_samples,
    write_image_grid,
    write_images_json,
    write_points_csv,
    write_scatter_png,
)
from restoration_gm.inverse import (
    DEFAULT_SOLVER_CONFIGS,
    SolverConfig,
    baseline_reconstruct,
    image_metrics,
    make_colorize,
    make_denoise,
    make_sr,
    solve,
)
from restoration_gm.logger import logger
from restoration_gm.numerics import make_rng
from restoration_gm.priors import mmd
from restoration_gm.sampling import generate, generate_mmse
from restoration_gm.training import train
from restoration_gm.utils import (
    artifact_metadata,
    config_hash,
    write_csv,
    write_json,
    write_sidecar,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    import numpy as np
    from numpy.typing import NDArray

    from restoration_gm.checkpoint import Checkpoint
    from restoration_gm.config import DatasetConfig
    from restoration_gm.inverse import InverseTask

EVAL_MMD_COUNT = 2000
TASKS = ('denoise', 'sr', 'color')


def _shape(text: str) -> list[int]:
    try:
        shape = [int(part) for part in text.split(',')]
    except ValueError as exception:
        msg = f'shape must be comma-separated integers, got {text!r}'
        raise argparse.ArgumentTypeError(msg) from exception
    if not shape or min(shape) < 1:
        msg = f'shape must be positive, got {text!r}'
        raise argparse.ArgumentTypeError(msg)
    return shape


def _emit_json(
    path: Path,
    document: Any,  # noqa: ANN401
    metadata: dict[str, Any],
) -> None:
    write_json(path, document)
    write_sidecar(path, metadata)
    logger.info('wrote %s', path)


def _emit_samples(
    out: Path,
    name: str,
    samples: NDArray[np.float64],
    shape: Sequence[int],
    metadata: dict[str, Any],
    *,
    png: bool,
) -> Path:
    if len(shape) == 1:
        path = out / f'{name}.csv'
        write_points_csv(path, samples)
        if png and shape[0] == 2:  # noqa: PLR2004
            write_scatter_png(out / f'{name}.png', samples)
    else:
        image_shape = cast('tuple[int, int, int]', (*shape, 1)[:3])
        path = out / f'{name}.json'
        write_images_json(path, samples, image_shape)
        if png:
            write_image_grid(out / f'{name}.png', samples, image_shape)
    write_sidecar(path, metadata)
    logger.info('wrote %d samples to %s', samples.shape[0], path)
    return path


def cmd_schedule(args: argparse.Namespace) -> int:
    """Print the per-step operator table of a schedule."""
    descriptor = resolve_schedule(
        {'kind': args.kind, 'steps': args.steps, 'data_shape': args.shape},
    )
    schedule = schedule_from_descriptor(descriptor)
    document = {
        'schedule': dict(descriptor),
        'latent_std': schedule.latent_std,
        'latent_var': schedule.latent_std**2,
        'decomposable': is_decomposable(schedule),
        'steps': schedule.table(),
    }
    print(json.dumps(document, indent=2))  # noqa: T201
    if args.out is not None:
        _emit_json(
            args.out / 'schedule.json',
            document,
            artifact_metadata(config_hash(dict(descriptor)), 0, 'schedule'),
        )
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    """Train a model from an experiment file."""
    config = load_train_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.iterations is not None:
        config = replace(config, iterations=args.iterations)
    if config.dataset is None:
        msg = f'{args.config} names no "dataset" to train on'
        raise InvalidArgumentError(msg)
    dataset = load_dataset(config.dataset)
    resume = load_checkpoint(args.ckpt) if args.ckpt is not None else None
    record = train(config, dataset, resume=resume, out_dir=args.out)
    if record.metrics:
        last = record.metrics[-1]
        logger.info(
            'finished at iteration %d with energy distance %.6g',
            int(last['iteration']),
            last['energy'],
        )
    return EXIT_OK


def _checkpoint_metadata(
    checkpoint: Checkpoint,
    seed: int,
    command: str,
) -> dict[str, Any]:
    digest = config_hash(checkpoint.config or dict(checkpoint.schedule))
    return artifact_metadata(digest, seed, command)


def cmd_sample(args: argparse.Namespace) -> int:
    """Generate samples from a checkpoint."""
    checkpoint = load_checkpoint(args.ckpt)
    schedule = schedule_from_descriptor(checkpoint.schedule)
    seed = checkpoint.seed if args.seed is None else args.seed
    rng = make_rng(seed)
    provenance = {'checkpoint': str(args.ckpt), 'seed': seed}
    if checkpoint.algorithm == 'mmse':
        batch = generate_mmse(checkpoint.generator, schedule, args.n, rng, provenance)
    else:
        batch = generate(
            checkpoint.generator,
            schedule,
            args.n,
            rng,
            transition=args.transition,
            z_mode=args.z_mode,
            provenance=provenance,
        )
    logger.info('generated %d samples with %d NFE', batch.count, batch.nfe)
    _emit_samples(
        args.out,
        'samples',
        batch.samples,
        checkpoint.schedule['data_shape'],
        _checkpoint_metadata(checkpoint, seed, 'sample'),
        png=args.png,
    )
    return EXIT_OK


def _held_out_images(checkpoint: Checkpoint, n: int) -> NDArray[np.float64]:
    config = checkpoint.config or {}
    dataset = cast('DatasetConfig | None', config.get('dataset'))
    if dataset is None or dataset['kind'] != 'toy-images':
        msg = 'inverse problems need a model trained on toy images'
        raise InvalidArgumentError(msg)
    return load_dataset({**dataset, 'size': n, 'seed': dataset.get('seed', 0) + 1})


def _make_task(
    args: argparse.Namespace,
    truth: NDArray[np.float64],
    shape: tuple[int, int, int],
) -> InverseTask:
    rng = make_rng([args.seed or 0, 1])
    if args.task == 'denoise':
        return make_denoise(truth, shape, rng, sigma=args.sigma or DENOISE_SIGMA)
    if args.task == 'sr':
        return make_sr(truth, shape, rng, factor=args.factor, sigma=args.sigma or 0.0)
    return make_colorize(truth, shape, rng, sigma=args.sigma or 0.0)


def cmd_invert(args: argparse.Namespace) -> int:
    """Solve an inverse problem on held-out toy images with a trained model."""
    checkpoint = load_checkpoint(args.ckpt)
    schedule = schedule_from_descriptor(checkpoint.schedule)
    shape = cast('tuple[int, int, int]', tuple(checkpoint.schedule['data_shape']))
    if len(shape) != 3:  # noqa: PLR2004
        msg = f'inverse problems act on (H, W, C) images, the model has {shape}'
        raise InvalidArgumentError(msg)
    task = _make_task(args, _held_out_images(checkpoint, args.n), shape)
    defaults = DEFAULT_SOLVER_CONFIGS[task.kind]
    solver = SolverConfig(
        repeats=args.repeats or defaults.repeats,
        lam=defaults.lam if args.lam is None else args.lam,
        alpha=args.alpha or defaults.alpha,
        depth=args.depth or defaults.depth,
    )
    seed = checkpoint.seed if args.seed is None else args.seed
    solution = solve(
        task,
        checkpoint.generator,
        schedule,
        solver,
        make_rng(seed),
        z_mode=args.z_mode,
    )
    baseline = baseline_reconstruct(task)
    logger.info('solved %d %s tasks with %d NFE', task.count, task.kind, solution.nfe)

    metadata = _checkpoint_metadata(checkpoint, seed, f'invert {args.task}')
    height, width, channels = shape
    observation_shape = {
        'denoise': shape,
        'super_resolve': (height // task.factor, width // task.factor, channels),
        'colorize': (height, width, 1),
    }[task.kind]
    for name, images, image_shape in (
        ('observation', task.observation, observation_shape),
        ('baseline', baseline, shape),
        ('reconstruction', solution.reconstruction, shape),
        ('ground_truth', task.ground_truth, shape),
    ):
        _emit_samples(args.out, name, images, image_shape, metadata, png=args.png)

    rows = [
        ['baseline', *image_metrics(task, baseline)],
        ['rgm', *image_metrics(task, solution.reconstruction)],
    ]
    if task.kind == 'denoise':
        rows.insert(0, ['observation', *image_metrics(task, task.observation)])
    metrics_path = args.out / 'metrics.csv'
    write_csv(metrics_path, ('method', 'psnr', 'ssim'), rows)
    write_sidecar(metrics_path, metadata)
    for method, value_psnr, value_ssim in rows:
        logger.info('%s: PSNR %.3f dB, SSIM %.4f', method, value_psnr, value_ssim)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    """Compare a sample file with a reference file."""
    samples = read_samples(args.samples)
    reference = read_samples(args.reference)
    if samples.shape[1:] != reference.shape[1:]:
        msg = f'samples {samples.shape} and reference {reference.shape} differ in width'
        raise InvalidArgumentError(msg)
    document: dict[str, Any] = {
        'count': samples.shape[0],
        'reference_count': reference.shape[0],
        'energy_distance': energy_distance(samples, reference),
    }
    count = min(samples.shape[0], reference.shape[0], EVAL_MMD_COUNT)
    if count >= 2:  # noqa: PLR2004
        document['mmd'] = mmd(
            samples[:count],
            reference[:count],
            MMD_BANDWIDTHS,
        ).value
    if samples.shape[1] == 2:  # noqa: PLR2004
        coverage = mode_coverage(samples, GMM8Spec())
        document['modes_covered'] = coverage.covered
        document['mode_fractions'] = coverage.fractions.tolist()
    print(json.dumps(document, indent=2))  # noqa: T201
    if args.out is not None:
        metadata = artifact_metadata(
            config_hash(
                {'samples': str(args.samples), 'reference': str(args.reference)},
            ),
            0,
            'eval',
        )
        _emit_json(args.out / 'eval.json', document, metadata)
        path = args.out / 'eval.csv'
        write_csv(
            path,
            ('metric', 'value'),
            [
                [key, float(value)]
                for key, value in document.items()
                if isinstance(value, int | float)
            ],
        )
        write_sidecar(path, metadata)
    return EXIT_OK


def cmd_data(args: argparse.Namespace) -> int:
    """Export a synthetic dataset."""
    seed = args.seed or 0
    config: DatasetConfig = {'kind': args.dataset, 'size': args.n, 'seed': seed}
    if args.dataset == 'toy-images':
        config['family'] = args.family
        config['image_size'] = args.image_size
        config['channels'] = args.channels
        shape = [args.image_size, args.image_size, args.channels]
    else:
        shape = [2]
    data = load_dataset(config)
    _emit_samples(
        args.out,
        'data',
        data,
        shape,
        artifact_metadata(config_hash(dict(config)), seed, 'data'),
        png=args.png,
    )
    return EXIT_OK


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--verbose', '-v', action='count', default=0)
    parser.add_argument('--log-file', default='')
    parser.add_argument('--seed', type=int)


def _outputs(parser: argparse.ArgumentParser, *, required: bool = True) -> None:
    parser.add_argument('--out', type=Path, required=required)
    parser.add_argument('--png', action='store_true', help='also render PNG files')


def build_parser() -> argparse.ArgumentParser:
    """The `rgm` argument parser."""
    parser = argparse.ArgumentParser(
        prog='rgm',
        description='Restoration-based generative models on toy data.',
    )
    commands = parser.add_subparsers(dest='command', required=True)

    schedule = commands.add_parser('schedule', help='print a degradation schedule')
    _common(schedule)
    schedule.add_argument('--kind', choices=SCHEDULE_KINDS, required=True)
    schedule.add_argument('--steps', type=int, required=True)
    schedule.add_argument('--shape', type=_shape, default=[2])
    schedule.add_argument('--out', type=Path)
    schedule.set_defaults(handler=cmd_schedule)

    train_parser = commands.add_parser('train', help='train from an experiment file')
    _common(train_parser)
    train_parser.add_argument('--config', type=Path, required=True)
    train_parser.add_argument('--ckpt', type=Path, help='checkpoint to resume from')
    train_parser.add_argument('--iterations', type=int)
    train_parser.add_argument('--out', type=Path, required=True)
    train_parser.set_defaults(handler=cmd_train)

    sample = commands.add_parser('sample', help='generate samples')
    _common(sample)
    sample.add_argument('--ckpt', type=Path, required=True)
    sample.add_argument('--n', type=int, default=10_000)
    sample.add_argument(
        '--transition',
        choices=('forward', 'posterior'),
        default='forward',
    )
    sample.add_argument('--z-mode', choices=('gaussian', 'zero'), default='gaussian')
    _outputs(sample)
    sample.set_defaults(handler=cmd_sample)

    invert = commands.add_parser('invert', help='solve an inverse problem')
    _common(invert)
    invert.add_argument('--ckpt', type=Path, required=True)
    invert.add_argument('--task', choices=TASKS, required=True)
    invert.add_argument('--n', type=int, default=50)
    invert.add_argument('--sigma', type=float)
    invert.add_argument('--factor', type=int, default=SR_FACTOR)
    invert.add_argument('--repeats', type=int)
    invert.add_argument('--lam', type=float)
    invert.add_argument('--alpha', type=float)
    invert.add_argument('--depth', type=int)
    invert.add_argument('--z-mode', choices=('gaussian', 'zero'), default='gaussian')
    _outputs(invert)
    invert.set_defaults(handler=cmd_invert)

    evaluate = commands.add_parser('eval', help='compare samples with a reference')
    _common(evaluate)
    evaluate.add_argument('--samples', type=Path, required=True)
    evaluate.add_argument('--reference', type=Path, required=True)
    evaluate.add_argument('--out', type=Path)
    evaluate.set_defaults(handler=cmd_eval)

    data = commands.add_parser('data', help='export a synthetic dataset')
    _common(data)
    data.add_argument('--dataset', choices=('gmm8', 'toy-images'), default='gmm8')
    data.add_argument('--n', type=int, default=10_000)
    data.add_argument(
        '--family',
        choices=('blobs', 'gradients', 'checkerboards'),
        default='blobs',
    )
    data.add_argument('--image-size', type=int, default=16)
    data.add_argument('--channels', type=int, default=1)
    _outputs(data)
    data.set_defaults(handler=cmd_data)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """Run one `rgm` command and return its exit code."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_restoration_gm({'verbosity': args.verbose, 'log_file': args.log_file})
    handler = cast('Callable[[argparse.Namespace], int]', args.handler)
    if getattr(args, 'n', 1) < 1:
        parser.error('--n must be at least 1')
    try:
        return handler(args)
    except RestorationGMError as exception:
        logger.error('%s: %s', type(exception).__name__, exception)  # noqa: TRY400
        return exception.exit_code


__all__ = (
    'build_parser',
    'cmd_data',
    'cmd_eval',
    'cmd_invert',
    'cmd_sample',
    'cmd_schedule',
    'cmd_train',
    'main',
)


if __name__ == '__main__':
    sys.exit(main())
