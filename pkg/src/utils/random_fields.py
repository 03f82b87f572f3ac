"""Random smooth support functions and densities on the cap, for property checks."""

import logging
from typing import Optional

import numpy as np
from scipy.special import comb

from src.models.fields import CapGrid, ScalarField
from src.services import cap_domain
from src.services.hessian_operator import curvature_tensor

logger = logging.getLogger(__name__)


def random_convex_support(
    grid: CapGrid,
    rng: np.random.Generator,
    amplitude: float = 0.15,
    even: bool = False,
    min_eigenvalue: float = 0.05,
    max_tries: int = 50,
) -> ScalarField:
    """
    h = l (1 + a0 cos(pi s/theta) + a2 sin^2(pi s/(2 theta)) cos(2 phi - phi2))
        + b1 sin s cos phi + b2 sin s sin phi,

    Robin-compatible by construction (h/l has zero normal derivative at
    s = theta, the linear terms lie in the kernel of the Robin operator).
    Draws are rejected until W is positive definite with margin.
    """
    theta = grid.theta
    s, phi = grid.s_nodes, grid.phi_nodes
    ell = cap_domain.ell_field(grid).values
    for _ in range(max_tries):
        a0, a2 = rng.uniform(-amplitude, amplitude, size=2)
        phi2 = rng.uniform(0.0, 2.0 * np.pi)
        b1, b2 = (0.0, 0.0) if even else rng.uniform(-amplitude, amplitude, size=2)
        u = (
            1.0
            + a0 * np.cos(np.pi * s / theta)
            + a2 * np.sin(0.5 * np.pi * s / theta) ** 2 * np.cos(2.0 * phi - phi2)
        )
        values = ell * u + b1 * np.sin(s) * np.cos(phi) + b2 * np.sin(s) * np.sin(phi)
        h = ScalarField(grid, values)
        if h.min() > 0.0 and curvature_tensor(h).min_eigenvalue > min_eigenvalue:
            return h
        amplitude *= 0.8
    logger.warning("No strictly convex draw after %d tries; returning the cap", max_tries)
    return cap_domain.ell_field(grid)


def random_density(
    grid: CapGrid,
    rng: np.random.Generator,
    k: int,
    l: int,
    p: float,
    amplitude: float = 0.2,
    even: bool = False,
    n: int = 2,
) -> ScalarField:
    """Rigidity density times a smooth positive factor exp(perturbation)."""
    theta = grid.theta
    s, phi = grid.s_nodes, grid.phi_nodes
    ell = cap_domain.ell_field(grid).values
    ratio = comb(n, k, exact=True) / comb(n, l, exact=True)
    c0, c1, c2 = rng.uniform(-amplitude, amplitude, size=3)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    radial = np.sin(0.5 * np.pi * s / theta) ** 2
    perturbation = c0 * np.cos(np.pi * s / theta) + c2 * radial * np.cos(2.0 * (phi - phase))
    if not even:
        perturbation = perturbation + c1 * np.sin(s) * np.cos(phi - phase)
    return ScalarField(grid, ratio * ell ** (1.0 - p) * np.exp(perturbation))


def density_from_convex_gauge(g: ScalarField, q: float, scale: Optional[float] = None) -> ScalarField:
    """f = scale * g^(-q); satisfies the convexity condition whenever g is convex and Robin."""
    scale = 1.0 if scale is None else scale
    return g.with_values(scale * g.values ** (-q))
