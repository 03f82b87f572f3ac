"""
Numerical defaults, builtin density names, exit codes and other
configuration constants shared by the solver, the checks and the CLI.
"""

from typing import Dict, Tuple

# --- Grid ---------------------------------------------------------------
# Geodesic polar grid on the cap; the solver path is two-dimensional.
AMBIENT_DIMENSION: int = 2
DEFAULT_NS: int = 64
DEFAULT_NPHI: int = 128
COARSE_NS: int = 32
COARSE_NPHI: int = 64
MIN_NS: int = 4

# "Grid tolerance" used by the checks is GRID_TOL_FACTOR * (ds^2 + dphi^2).
GRID_TOL_FACTOR: float = 10.0

# --- Newton / continuation ---------------------------------------------
NEWTON_TOL: float = 1e-10
EIGEN_NEWTON_TOL: float = 1e-11
MAX_NEWTON: int = 30
MIN_STEP_LENGTH: float = 2.0**-12
DT_MIN: float = 1e-3
DT_MAX: float = 0.25
DT_GROWTH: float = 1.5
FAST_NEWTON_ITERATIONS: int = 3
TIKHONOV_SHIFT: float = 1e-10
# Ratio min|U_ii| / max|U_ii| below which a factorization counts as near-singular.
NEAR_SINGULAR_PIVOT_RATIO: float = 1e-14
EIGEN_GAP_TOL: float = 1e-9

# --- Evenness -----------------------------------------------------------
EVENNESS_TOL: float = 1e-12

# --- Eigenvalue mode ----------------------------------------------------
EPSILON_LADDER: Tuple[float, ...] = (0.2, 0.1, 0.05, 0.025, 0.0125)
EIGEN_RESIDUAL_TOL: float = 1e-6

# --- Checks -------------------------------------------------------------
C0_SLACK: float = 0.02
UNIQUENESS_TOL: float = 1e-6
# Step sizes of the centered first-variation difference, coarse then fine.
FIRST_VARIATION_EPS: Tuple[float, float] = (1e-3, 5e-4)
FIRST_VARIATION_TOL: float = 1e-4
CHECKPOINT_JSON: str = "checkpoint.json"
CHECKPOINT_CSV: str = "checkpoint.csv"

# --- CLI ----------------------------------------------------------------
CONFIG_SCHEMA_VERSION: int = 1
THREADS_ENV_VAR: str = "CAPSOLVE_THREADS"
LOG_FORMAT: str = "%(asctime)s - %(levelname)s - %(message)s"

BUILTIN_DENSITIES: Tuple[str, ...] = ("rigidity", "constant", "bump", "even-bump")

# Bump densities: multiplicative Gaussian bump on the rigidity density.
BUMP_AMPLITUDE: float = 0.5
BUMP_WIDTH: float = 0.35

EXIT_OK: int = 0
EXIT_CHECK_FAILED: int = 2
EXIT_NOT_CONVERGED: int = 3
EXIT_BAD_CONFIG: int = 4

# Output artifacts written by `run`.
ARTIFACT_NAMES: Dict[str, str] = {
    "report": "report.json",
    "field": "h.csv",
    "surface": "surface.obj",
    "boundary": "boundary.obj",
    "trace": "trace.csv",
    "grid": "grid.json",
}
