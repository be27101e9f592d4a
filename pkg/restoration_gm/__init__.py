"""Restoration-based generative models on desk-scale data.

A generator `G(y_k, k, z)` learns to undo one step of a linear degradation
schedule with a MAP-style loss: a fidelity term tying the restoration to the
degraded observation plus a learned distribution prior (discriminator, MMD or
sliced Wasserstein). Chaining the restorations from `y_T ~ p_T` generates data;
plugging a trained model into a proximal splitting scheme solves inverse problems.

* IMPORTANT: command-line tools call `setup_restoration_gm` to configure logging,
library users may call it too.
"""

from restoration_gm.config import (
    load_train_config,
    resolve_train_config,
    setup_restoration_gm,
)
from restoration_gm.degradation import build_schedule, schedule_from_descriptor
from restoration_gm.sampling import generate
from restoration_gm.training import train

__all__ = (
    'build_schedule',
    'generate',
    'load_train_config',
    'resolve_train_config',
    'schedule_from_descriptor',
    'setup_restoration_gm',
    'train',
)
