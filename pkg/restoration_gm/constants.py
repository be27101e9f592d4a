"""Provide constants of the package."""

import os

from str_to_bool import str_to_bool

BETA_MAX = float(os.environ.get('RGM_BETA_MAX', '20'))
BETA_MIN = float(os.environ.get('RGM_BETA_MIN', '0.1'))
PINV_TOL = float(os.environ.get('RGM_PINV_TOL', '1e-12'))

ADAM_BETA1 = float(os.environ.get('RGM_ADAM_BETA1', '0.9'))
ADAM_BETA2 = float(os.environ.get('RGM_ADAM_BETA2', '0.999'))
ADAM_EPS = float(os.environ.get('RGM_ADAM_EPS', '1e-8'))

HIDDEN = int(os.environ.get('RGM_HIDDEN', '32'))
DEPTH = int(os.environ.get('RGM_DEPTH', '3'))
STEP_ENCODING = os.environ.get('RGM_STEP_ENCODING', 'scalar')

ALGORITHM = os.environ.get('RGM_ALGORITHM', 'relaxed')
PRIOR_KIND = os.environ.get('RGM_PRIOR', 'kld')
LAMBDA = float(os.environ.get('RGM_LAMBDA', '1.0'))
LR_G = float(os.environ.get('RGM_LR_G', '1e-4'))
LR_D = float(os.environ.get('RGM_LR_D', '1e-4'))
BATCH_SIZE = int(os.environ.get('RGM_BATCH_SIZE', '1000'))
ITERATIONS = int(os.environ.get('RGM_ITERATIONS', '20000'))
LOG_EVERY = int(os.environ.get('RGM_LOG_EVERY', '500'))
SEED = int(os.environ.get('RGM_SEED', '0'))
R1_GAMMA = float(os.environ.get('RGM_R1_GAMMA', '0.05'))
Z_MODE = os.environ.get('RGM_Z_MODE', 'gaussian')

MMD_BANDWIDTHS = (0.1, 0.5, 1.0, 2.0, 10.0)
DSWD_NUM_PROJECTIONS = int(os.environ.get('RGM_DSWD_PROJECTIONS', '10'))
DSWD_ITERATIONS = int(os.environ.get('RGM_DSWD_ITERATIONS', '10'))
DSWD_LAMBDA_C = float(os.environ.get('RGM_DSWD_LAMBDA_C', '10'))
DSWD_LR = float(os.environ.get('RGM_DSWD_LR', '5e-3'))

GMM_RADIUS = 2.0
GMM_STD = 0.1
GMM_MODES = 8
COVERAGE_THRESHOLD = 0.02

TOY_IMAGE_SIZE = 16
DATA_RANGE = 2.0
PSNR_CAP = 99.0

CHECKPOINT_VERSION = 1
RUN_RECORD_VERSION = 1

IS_DEBUG_MODE = str_to_bool(os.environ.get('RGM_DEBUG', 'False'))
LOG_FILE = os.environ.get('RGM_LOG_FILE', '')
RUN_SLOW = str_to_bool(os.environ.get('RGM_RUN_SLOW', 'False'))

# 40/255 on a [0, 1] intensity scale, data live in [-1, 1]
DENOISE_SIGMA = float(os.environ.get('RGM_DENOISE_SIGMA', str(2 * 40 / 255)))
SR_FACTOR = int(os.environ.get('RGM_SR_FACTOR', '2'))
