import os

from utils.initializer import get_int_env

DEFAULT_SEED = get_int_env("ATOMICS_SEED", 20240917)
DEFAULT_THREADS = get_int_env("ATOMICS_THREADS", 1)
FORMAT_VERSION = "1"

# measures
MASS_TOLERANCE = 1e-9
MASS_EXACT_TOLERANCE = 1e-12
MERGE_DISTANCE = 1e-12
STRICT_WEIGHT_TOLERANCE = 1e-12

# sampling
DEFAULT_TRUNCATION = float(os.environ["ATOMICS_TRUNCATION"]) if "ATOMICS_TRUNCATION" in os.environ else 1e-6
MAX_TRUNCATION = 1e-2
MC_BLOCK_SIZE = 1000

# transport
PLAN_TOLERANCE = 1e-10
EPS_GRID_SIZE = 64
EPS_GRID_LOW = 1e-4

# superposition
GROUPING_TOLERANCE = 1e-9
AMBIGUITY_FACTOR = 2.0

# counterexample
MAX_DEPTH = 20

# capacity
DEFAULT_MC_SAMPLES = 10 ** 6
GAUSS_LEGENDRE_NODES = 128

# manifold
WRAPPED_IMAGES = 10
ANGLE_QUADRATURE_NODES = 512
SURFACE_TOLERANCE = 1e-9
TANGENT_TOLERANCE = 1e-9
