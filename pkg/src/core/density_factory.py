"""
Factory for prescribed densities.

`get_density` turns a DensitySource (builtin name, CSV path or expression)
into a ScalarField on the run's grid. `get_worker_count` reads the
CAPSOLVE_THREADS environment variable.
"""

import logging
import os

import numpy as np
from scipy.special import comb

from src.core.constants import (
    BUILTIN_DENSITIES,
    BUMP_AMPLITUDE,
    BUMP_WIDTH,
    THREADS_ENV_VAR,
)
from src.core.exceptions import ConfigError
from src.models.fields import CapGrid, ScalarField
from src.models.models import DensitySource
from src.services import cap_domain
from src.utils.expression import evaluate_on_grid
from src.utils.field_io import field_from_csv

logger = logging.getLogger(__name__)


def _bump(grid: CapGrid, phi0: float) -> np.ndarray:
    """Gaussian in the chordal distance to the point (theta/2, phi0)."""
    s0 = 0.5 * grid.theta
    centre = np.array([np.sin(s0) * np.cos(phi0), np.sin(s0) * np.sin(phi0), np.cos(s0)])
    chord2 = np.sum((cap_domain.outer_normal(grid) - centre) ** 2, axis=1)
    return np.exp(-chord2 / BUMP_WIDTH**2)


def builtin_density(name: str, grid: CapGrid, k: int, l: int, p: float, n: int = 2) -> ScalarField:
    """
    rigidity:  C(n,k)/C(n,l) l^(1-p)   (h = l solves the problem)
    constant:  C(n,k)/C(n,l)
    bump:      rigidity times (1 + A bump at (theta/2, 0))
    even-bump: rigidity times (1 + A/2 (bump at phi=0 + bump at phi=pi))
    """
    ratio = comb(n, k, exact=True) / comb(n, l, exact=True)
    ell = cap_domain.ell_field(grid).values
    rigidity = ratio * ell ** (1.0 - p)
    if name == "rigidity":
        values = rigidity
    elif name == "constant":
        values = np.full(grid.size, float(ratio))
    elif name == "bump":
        values = rigidity * (1.0 + BUMP_AMPLITUDE * _bump(grid, 0.0))
    elif name == "even-bump":
        values = rigidity * (1.0 + 0.5 * BUMP_AMPLITUDE * (_bump(grid, 0.0) + _bump(grid, np.pi)))
    else:
        logger.critical("Density '%s' is not one of %s", name, ", ".join(BUILTIN_DENSITIES))
        raise ConfigError(f"unknown builtin density: {name}")
    return ScalarField(grid, values)


def get_density(source: DensitySource, grid: CapGrid, k: int, l: int, p: float, n: int = 2) -> ScalarField:
    """Instantiate the density described by `source` on `grid`."""
    if source.builtin is not None:
        logger.info("Density: builtin '%s'", source.builtin)
        f = builtin_density(source.builtin, grid, k, l, p, n)
    elif source.csv_path is not None:
        logger.info("Density: CSV file %s", source.csv_path)
        f = field_from_csv(source.csv_path, grid)
    else:
        logger.info("Density: expression '%s'", source.expression)
        f = evaluate_on_grid(source.expression, grid)
    if not np.all(f.values > 0.0):
        raise ConfigError(f"density must be positive on the grid (min {f.min():.6g})")
    return f


def get_worker_count() -> int:
    """Worker cap from CAPSOLVE_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV_VAR, "1")
    try:
        count = int(raw)
    except ValueError as exc:
        raise ConfigError(f"{THREADS_ENV_VAR} must be an integer, got '{raw}'") from exc
    if count < 1:
        raise ConfigError(f"{THREADS_ENV_VAR} must be >= 1, got {count}")
    logger.info("Worker count configured: %d", count)
    return count
