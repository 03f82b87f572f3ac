"""
Test Utilities

Shared constructors for grids, problems, random strictly convex support
functions and random densities, plus a result-table logger.
"""

import logging
import math
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from src.core.density_factory import builtin_density
from src.models.fields import CapGrid, ScalarField
from src.models.models import ProblemSpec
from src.services import cap_domain
from src.utils.random_fields import random_convex_support, random_density

log = logging.getLogger(__name__)

SMALL_NS = 16
SMALL_NPHI = 32


def make_grid(theta: float = math.pi / 3, ns: int = SMALL_NS, nphi: int = SMALL_NPHI) -> CapGrid:
    return cap_domain.build_grid(theta, ns, nphi)


def make_spec(
    grid: CapGrid, k: int, l: int, p: float, f: Optional[ScalarField] = None, **options: Any
) -> ProblemSpec:
    """ProblemSpec on `grid`; the density defaults to the rigidity density (h = l solves)."""
    f = f if f is not None else builtin_density("rigidity", grid, k, l, p)
    return ProblemSpec(k=k, l=l, p=p, theta=grid.theta, f=f, **options)


def convex_support(grid: CapGrid, seed: int, **kwargs: Any) -> ScalarField:
    """Random strictly convex Robin-compatible support function."""
    return random_convex_support(grid, np.random.default_rng(seed), **kwargs)


def positive_density(grid: CapGrid, seed: int, k: int, l: int, p: float, **kwargs: Any) -> ScalarField:
    """Random smooth positive density close to the rigidity density."""
    return random_density(grid, np.random.default_rng(seed), k, l, p, **kwargs)


def horizontal_linear(grid: CapGrid, a: float = 1.0, b: float = 0.0) -> ScalarField:
    """a sin s cos phi + b sin s sin phi: support functions of horizontal translations."""
    s, phi = grid.s_nodes, grid.phi_nodes
    return ScalarField(grid, a * np.sin(s) * np.cos(phi) + b * np.sin(s) * np.sin(phi))


def log_table(title: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    """Logs a fixed-width table of results."""
    log.info("=" * 80)
    log.info("%s", title)
    log.info("=" * 80)
    log.info(" | ".join(f"{h:>14}" for h in header))
    log.info("-" * 80)
    for row in rows:
        cells = [f"{v:>14.6e}" if isinstance(v, float) else f"{str(v):>14}" for v in row]
        log.info(" | ".join(cells))
    log.info("")
