"""
Convex-geometry layer on top of support functions on the cap: surface
reconstruction, quermassintegrals, Firey p-sums, mixed p-quermassintegrals,
area measures and radii diagnostics.
"""

import logging
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import comb

from src.core.constants import FIRST_VARIATION_EPS
from src.core.exceptions import ConvexityError, DomainError
from src.models.fields import CurvatureField, EmbeddedSurface, ScalarField
from src.models.models import ProblemSpec
from src.services import cap_domain
from src.services.hessian_operator import curvature_tensor
from src.utils import field_io

logger = logging.getLogger(__name__)

DIMENSION = 2


def _sigma(W: CurvatureField, m: int) -> np.ndarray:
    if m == 0:
        return np.ones_like(W.w_ss)
    if m == 1:
        return W.sigma1
    if m == 2:
        return W.sigma2
    return np.zeros_like(W.w_ss)


def normalized_sigma(W: CurvatureField, m: int) -> np.ndarray:
    """H_m(W) = sigma_m(W) / C(2, m)."""
    return _sigma(W, m) / comb(DIMENSION, m, exact=True)


def require_strictly_convex(h: ScalarField, W: Optional[CurvatureField] = None) -> CurvatureField:
    W = W if W is not None else curvature_tensor(h)
    if not np.all(W.lam2 > 0.0):
        node = int(np.argmin(W.lam2))
        raise ConvexityError(node, float(W.lam2[node]))
    return W


def reconstruct(h: ScalarField, theta: Optional[float] = None) -> EmbeddedSurface:
    """
    X = grad h + h nu on the capillary Gauss map parametrisation, with
    nu = xi - cos(theta) e and principal curvatures 1 / lambda(W).
    """
    grid = h.grid
    if theta is not None and abs(theta - grid.theta) > 1e-15:
        raise DomainError("theta does not match the grid of h")
    W = require_strictly_convex(h)
    nu = cap_domain.outer_normal(grid)
    e_s, e_phi = cap_domain.frame_vectors(grid)
    grad = cap_domain.covariant_gradient(h)
    points = grad[:, :1] * e_s + grad[:, 1:] * e_phi + h.values[:, None] * nu
    curvatures = np.column_stack([1.0 / W.lam1, 1.0 / W.lam2])
    return EmbeddedSurface(grid=grid, points=points, normals=nu, curvatures=curvatures, h=h)


def boundary_contact(surface: EmbeddedSurface) -> Dict[str, float]:
    """Height of the boundary ring above the support plane and the contact-angle defect."""
    grid = surface.grid
    ring = grid.boundary_nodes
    e = np.array([0.0, 0.0, -1.0])
    angle_defect = surface.normals[ring] @ e + np.cos(grid.theta)
    return {
        "max_height": float(np.max(np.abs(surface.points[ring, 2]))),
        "max_angle_defect": float(np.max(np.abs(angle_defect))),
    }


def curvature_problem_residual(
    surface: EmbeddedSurface,
    f: ScalarField,
    spec: ProblemSpec,
    tau: Optional[float] = None,
) -> np.ndarray:
    """
    Per node sigma_{n-l}(kappa)/sigma_{n-k}(kappa) f <X, nu>^(p-1) - 1, or with
    tau given, <X, nu>^(k-l) sigma_{n-l}(kappa)/sigma_{n-k}(kappa) tau f - 1.
    """
    kappa = surface.curvatures
    support = np.einsum("ij,ij->i", surface.points, surface.normals)
    sig = {0: np.ones(len(kappa)), 1: kappa.sum(axis=1), 2: kappa.prod(axis=1)}
    ratio = sig[spec.n - spec.l] / sig[spec.n - spec.k]
    if tau is None:
        return ratio * f.values * support ** (spec.p - 1.0) - 1.0
    return support ** (spec.k - spec.l) * ratio * tau * f.values - 1.0


def quermassintegral(h: ScalarField, k: int) -> float:
    """V_k = 1/(n+1) * integral of h H_{n-k}(W)."""
    if not 0 <= k <= DIMENSION:
        raise DomainError(f"quermassintegral index must lie in [0, {DIMENSION}], got {k}")
    W = curvature_tensor(h)
    integrand = h.values * normalized_sigma(W, DIMENSION - k)
    return cap_domain.integrate(integrand, h.grid) / (DIMENSION + 1)


def p_sum(h_k: ScalarField, h_l: ScalarField, eps: float, p: float) -> ScalarField:
    """Firey p-sum support function (h_K^p + eps h_L^p)^(1/p)."""
    if p < 1.0 or eps < 0.0:
        raise DomainError(f"p-sum needs p >= 1 and eps >= 0, got p={p}, eps={eps}")
    if eps == 0.0:
        return h_k
    return h_k.with_values((h_k.values**p + eps * h_l.values**p) ** (1.0 / p))


def mixed_p_quermassintegral(h_k: ScalarField, h_l: ScalarField, p: float, k: int) -> float:
    """V_{p,k}(K, L) = 1/(n+1) * integral of h_L^p h_K^(1-p) H_{n-k}(W[h_K])."""
    W = require_strictly_convex(h_k)
    integrand = h_l.values**p * h_k.values ** (1.0 - p) * normalized_sigma(W, DIMENSION - k)
    return cap_domain.integrate(integrand, h_k.grid) / (DIMENSION + 1)


def p_variation(
    h_k: ScalarField, h_l: ScalarField, p: float, k: int, eps: float = FIRST_VARIATION_EPS[0]
) -> float:
    """
    Centered difference of eps -> V_k((h_K^p + eps h_L^p)^(1/p)) at eps = 0.

    Args:
        h_k: support function of K, strictly convex.
        h_l: support function of L on the same grid.
        p: Firey exponent, p >= 1.
        k: quermassintegral index.
        eps: half width of the difference.

    Returns:
        The difference quotient; it differs from `p_variation_exact` by O(eps^2).
    """
    plus = h_k.with_values((h_k.values**p + eps * h_l.values**p) ** (1.0 / p))
    minus = h_k.with_values((h_k.values**p - eps * h_l.values**p) ** (1.0 / p))
    return (quermassintegral(plus, k) - quermassintegral(minus, k)) / (2.0 * eps)


def p_variation_extrapolated(
    h_k: ScalarField,
    h_l: ScalarField,
    p: float,
    k: int,
    eps: Tuple[float, float] = FIRST_VARIATION_EPS,
) -> float:
    """Richardson combination of the two centered differences; error O(eps^4)."""
    coarse_eps, fine_eps = eps
    coarse = p_variation(h_k, h_l, p, k, coarse_eps)
    fine = p_variation(h_k, h_l, p, k, fine_eps)
    r2 = (coarse_eps / fine_eps) ** 2
    return (r2 * fine - coarse) / (r2 - 1.0)


def quermassintegral_derivative(h: ScalarField, direction: ScalarField, k: int) -> float:
    """
    Exact derivative of the discrete V_k at h along `direction`.

    V_k is a polynomial in the nodal values, so the derivative follows from
    the product rule on h H_{n-k}(W) with W linear in h.
    """
    if not 0 <= k <= DIMENSION:
        raise DomainError(f"quermassintegral index must lie in [0, {DIMENSION}], got {k}")
    W = curvature_tensor(h)
    dh = direction.values
    hess = cap_domain.covariant_hessian(direction)
    d_ss, d_sp, d_pp = hess.hss + dh, hess.hsp, hess.hpp + dh
    m = DIMENSION - k
    if m == 0:
        d_sigma = np.zeros_like(dh)
    elif m == 1:
        d_sigma = d_ss + d_pp
    else:
        d_sigma = d_ss * W.w_pp + W.w_ss * d_pp - 2.0 * W.w_sp * d_sp
    scale = comb(DIMENSION, m, exact=True)
    integrand = dh * normalized_sigma(W, m) + h.values * d_sigma / scale
    return cap_domain.integrate(integrand, h.grid) / (DIMENSION + 1)


def p_variation_exact(h_k: ScalarField, h_l: ScalarField, p: float, k: int) -> float:
    """Limit of `p_variation` as eps -> 0 on the same grid: the direction is h_K^(1-p) h_L^p / p."""
    direction = h_k.with_values(h_k.values ** (1.0 - p) * h_l.values**p / p)
    return quermassintegral_derivative(h_k, direction, k)


def area_measure_density(h: ScalarField, k: int, p: float) -> ScalarField:
    """Density of the capillary k-th p-area measure: l^p h^(1-p) H_{n-k}(W)."""
    W = require_strictly_convex(h)
    ell = cap_domain.ell_field(h.grid).values
    return h.with_values(ell**p * h.values ** (1.0 - p) * normalized_sigma(W, DIMENSION - k))


def radii(h: ScalarField) -> Dict[str, float]:
    """Inradius/circumradius proxies and the maximal principal radius (diagnostic)."""
    theta = h.grid.theta
    W = curvature_tensor(h)
    rho_minus, rho_plus = h.min(), h.max()
    max_radius = float(W.lam1.max())
    return {
        "rho_minus": rho_minus,
        "rho_plus": rho_plus,
        "rho_minus_over_cap_height": rho_minus / (1.0 - np.cos(theta)),
        "rho_plus_over_cap_height": rho_plus / (1.0 - np.cos(theta)),
        "rho_minus_over_sin": rho_minus / np.sin(theta),
        "rho_plus_over_sin": rho_plus / np.sin(theta),
        "max_principal_radius": max_radius,
        "radius_ratio": rho_plus**2 / rho_minus / max_radius,
    }


def minkowski_sides(h: ScalarField, r: int) -> Tuple[float, float]:
    """(n-r) * integral h sigma_r(W) and (r+1) * integral l sigma_{r+1}(W)."""
    if not 0 <= r <= DIMENSION - 1:
        raise DomainError(f"Minkowski index must lie in [0, {DIMENSION - 1}], got {r}")
    W = curvature_tensor(h)
    ell = cap_domain.ell_field(h.grid).values
    lhs = (DIMENSION - r) * cap_domain.integrate(h.values * _sigma(W, r), h.grid)
    rhs = (r + 1) * cap_domain.integrate(ell * _sigma(W, r + 1), h.grid)
    return lhs, rhs


def minkowski_defect(h: ScalarField, r: int) -> float:
    lhs, rhs = minkowski_sides(h, r)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs))


def alexandrov_fenchel_gap(h1: ScalarField, h2: ScalarField, k: int) -> float:
    """
    integral h2 sigma_k(W1) - (integral h1 sigma_k(W1))^(k/(k+1))
    * (integral h2 sigma_k(W2))^(1/(k+1)); non-negative for convex pairs.
    """
    W1 = require_strictly_convex(h1)
    W2 = require_strictly_convex(h2)
    grid = h1.grid
    mixed = cap_domain.integrate(h2.values * _sigma(W1, k), grid)
    own1 = cap_domain.integrate(h1.values * _sigma(W1, k), grid)
    own2 = cap_domain.integrate(h2.values * _sigma(W2, k), grid)
    return mixed - own1 ** (k / (k + 1.0)) * own2 ** (1.0 / (k + 1.0))


def export_obj(surface: EmbeddedSurface, path: Path) -> Path:
    logger.info("Writing surface mesh to %s", path)
    return field_io.write_obj(surface, path)


def export_boundary_polyline(surface: EmbeddedSurface, path: Path) -> Path:
    logger.info("Writing boundary polyline to %s", path)
    return field_io.write_boundary_polyline(surface, path)
