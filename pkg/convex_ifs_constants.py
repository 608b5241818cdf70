import os

CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "configs")
CONFIG_VERSION_PREFIX = "v1"
THREADS_ENV_VAR = "CONVEX_IFS_THREADS"

DEFAULT_TOL = 1e-6
DEFAULT_PICARD_TOL = 1e-9
DEFAULT_EPS_DECIMATE = 1e-6
DEFAULT_MAX_ITER = 200
DEFAULT_SEED = 42
DEFAULT_FALSIFIER_SAMPLES = 10000
DEFAULT_DIAGNOSE_DEPTH = 8
DEFAULT_DIAGNOSE_PAIRS = 10
DEFAULT_RENDER_SIZE = "512x512"
DEFAULT_RENDER_ITERS = 100000
DEFAULT_RENDER_BURN_IN = 100

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG_ERROR = 2
EXIT_NON_CONVERGENCE = 3
EXIT_BETA_COUNTEREXAMPLE = 4
