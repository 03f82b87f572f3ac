"""
Geometry and discretisation of the spherical cap C_theta.

The cap is the unit sphere centred at cos(theta) e, e = -E_3, cut by the
upper half-space. In geodesic polar coordinates (s, phi) about its top point
the intrinsic metric is ds^2 + sin^2 s dphi^2, the outer normal is
omega = (sin s cos phi, sin s sin phi, cos s) and the embedded point is
xi = omega + cos(theta) e.

All difference stencils are trigonometrically fitted: exact on
{1, cos, sin} in both s and phi, second order otherwise. Radial nodes sit at
s_i = (i + 1/2) ds with ds = theta / (ns - 1/2), so there is no node on the
pole and the outer ring lies on s = theta. Across the pole the ghost value
at (-s, phi) is read from (s, phi + pi).
"""

import logging
from typing import Callable, Sequence, Tuple, Union

import numpy as np
import scipy.sparse as sparse

from src.core.constants import MIN_NS
from src.core.exceptions import DomainError
from src.models.fields import CapGrid, FrameHessian, ScalarField, StencilSet

logger = logging.getLogger(__name__)

FieldLike = Union[ScalarField, np.ndarray]


def _one_sided_weights(delta: float, npoints: int, order: int) -> np.ndarray:
    """
    Weights w_m on the points u_m = -m * delta (m = 0..npoints-1) reproducing
    the `order`-th derivative at u = 0 exactly on the fitted basis.
    """
    u = -delta * np.arange(npoints)
    if order == 1:
        basis = np.vstack([np.ones_like(u), np.cos(u), np.sin(u)])
        rhs = np.array([0.0, 0.0, 1.0])
    else:
        basis = np.vstack([np.ones_like(u), np.cos(u), np.sin(u), np.sin(2.0 * u)])
        rhs = np.array([0.0, -1.0, 0.0, 0.0])
    return np.linalg.solve(basis, rhs)


def _radial_operator(
    ns: int, nphi: int, centered: Sequence[float], one_sided: Sequence[float]
) -> sparse.csr_matrix:
    """Assemble an s-derivative with the pole ghost and a one-sided outer ring."""
    size = ns * nphi
    i_idx, j_idx = np.meshgrid(np.arange(ns), np.arange(nphi))
    rows, cols, vals = [], [], []

    inner = i_idx < ns - 1
    row_i, row_j = i_idx[inner], j_idx[inner]
    for offset, weight in zip((-1, 0, 1), centered):
        if weight == 0.0:
            continue
        ci = row_i + offset
        cj = row_j.copy()
        across = ci < 0
        ci = np.where(across, -ci - 1, ci)
        cj = np.where(across, (cj + nphi // 2) % nphi, cj)
        rows.append(row_j * ns + row_i)
        cols.append(cj * ns + ci)
        vals.append(np.full(ci.shape, weight))

    edge_j = np.arange(nphi)
    for m, weight in enumerate(one_sided):
        rows.append(edge_j * ns + (ns - 1))
        cols.append(edge_j * ns + (ns - 1 - m))
        vals.append(np.full(nphi, weight))

    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )


def _angular_operator(ns: int, nphi: int, centered: Sequence[float]) -> sparse.csr_matrix:
    size = ns * nphi
    i_idx, j_idx = np.meshgrid(np.arange(ns), np.arange(nphi))
    row = (j_idx * ns + i_idx).ravel()
    rows, cols, vals = [], [], []
    for offset, weight in zip((-1, 0, 1), centered):
        if weight == 0.0:
            continue
        col = (((j_idx + offset) % nphi) * ns + i_idx).ravel()
        rows.append(row)
        cols.append(col)
        vals.append(np.full(row.shape, weight))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(size, size),
    )


def _rotation_by_pi(ns: int, nphi: int) -> sparse.csr_matrix:
    size = ns * nphi
    i_idx, j_idx = np.meshgrid(np.arange(ns), np.arange(nphi))
    row = (j_idx * ns + i_idx).ravel()
    col = (((j_idx + nphi // 2) % nphi) * ns + i_idx).ravel()
    return sparse.csr_matrix((np.ones(size), (row, col)), shape=(size, size))


def build_grid(theta: float, ns: int, nphi: int) -> CapGrid:
    """Build the polar grid on C_theta with its sparse stencils and quadrature."""
    if not 0.0 < theta < np.pi:
        raise DomainError(f"theta must lie in (0, pi), got {theta}")
    if ns < MIN_NS:
        raise DomainError(f"need at least {MIN_NS} radial nodes, got {ns}")
    if nphi < 4 or nphi % 2:
        raise DomainError(f"nphi must be even and >= 4, got {nphi}")

    ds = theta / (ns - 0.5)
    dphi = 2.0 * np.pi / nphi
    s = (np.arange(ns) + 0.5) * ds
    s[-1] = theta
    phi = np.arange(nphi) * dphi

    lower = np.clip(s - 0.5 * ds, 0.0, theta)
    upper = np.clip(s + 0.5 * ds, 0.0, theta)
    ring_area = (np.cos(lower) - np.cos(upper)) * dphi
    weights = np.tile(ring_area, nphi)

    first_c = np.array([-1.0, 0.0, 1.0]) / (2.0 * np.sin(ds))
    second_c = np.array([1.0, -2.0, 1.0]) / (4.0 * np.sin(0.5 * ds) ** 2)
    d_s = _radial_operator(ns, nphi, first_c, _one_sided_weights(ds, 3, 1))
    d_ss = _radial_operator(ns, nphi, second_c, _one_sided_weights(ds, 4, 2))
    d_p = _angular_operator(ns, nphi, np.array([-1.0, 0.0, 1.0]) / (2.0 * np.sin(dphi)))
    d_pp = _angular_operator(
        ns, nphi, np.array([1.0, -2.0, 1.0]) / (4.0 * np.sin(0.5 * dphi) ** 2)
    )

    s_nodes = np.tile(s, nphi)
    inv_sin = sparse.diags(1.0 / np.sin(s_nodes))
    cot = sparse.diags(np.cos(s_nodes) / np.sin(s_nodes))
    boundary = np.zeros((nphi, ns))
    boundary[:, -1] = 1.0
    identity = sparse.identity(ns * nphi, format="csr")

    stencils = StencilSet(
        d_s=d_s,
        d_phi_hat=(inv_sin @ d_p).tocsr(),
        hess_ss=d_ss,
        hess_sp=(inv_sin @ (d_p @ d_s - cot @ d_p)).tocsr(),
        hess_pp=(inv_sin @ inv_sin @ d_pp + cot @ d_s).tocsr(),
        robin=(sparse.diags(boundary.ravel()) @ (d_s - identity / np.tan(theta))).tocsr(),
        evenness=(0.5 * (identity + _rotation_by_pi(ns, nphi))).tocsr(),
    )
    logger.debug(
        "Built cap grid theta=%.6f ns=%d nphi=%d (ds=%.4g, dphi=%.4g)",
        theta, ns, nphi, ds, dphi,
    )
    return CapGrid(
        theta=float(theta), ns=ns, nphi=nphi, s=s, phi=phi,
        ds=float(ds), dphi=float(dphi), weights=weights, stencils=stencils,
    )


def _values(field: FieldLike) -> np.ndarray:
    return field.values if isinstance(field, ScalarField) else np.asarray(field, dtype=float)


def sample(grid: CapGrid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> ScalarField:
    """Evaluate fn(s, phi) at every node."""
    values = np.broadcast_to(fn(grid.s_nodes, grid.phi_nodes), (grid.size,))
    return ScalarField(grid, np.array(values, dtype=float))


def ell_field(grid: CapGrid) -> ScalarField:
    """The cap's own support function l = 1 - cos(theta) cos(s)."""
    return ScalarField(grid, 1.0 - np.cos(grid.theta) * np.cos(grid.s_nodes))


def outer_normal(grid: CapGrid) -> np.ndarray:
    """nu(xi) = xi - cos(theta) e, shape (N, 3)."""
    s, phi = grid.s_nodes, grid.phi_nodes
    return np.column_stack([np.sin(s) * np.cos(phi), np.sin(s) * np.sin(phi), np.cos(s)])


def frame_vectors(grid: CapGrid) -> Tuple[np.ndarray, np.ndarray]:
    """Ambient unit vectors e_s and e_phi of the orthonormal polar frame."""
    s, phi = grid.s_nodes, grid.phi_nodes
    e_s = np.column_stack([np.cos(s) * np.cos(phi), np.cos(s) * np.sin(phi), -np.sin(s)])
    e_phi = np.column_stack([-np.sin(phi), np.cos(phi), np.zeros_like(phi)])
    return e_s, e_phi


def embed(grid: CapGrid) -> np.ndarray:
    """Ambient position xi of every node; the cap meets {x_3 = 0} at s = theta."""
    xi = outer_normal(grid)
    xi[:, 2] -= np.cos(grid.theta)
    return xi


def ell_from_embedding(grid: CapGrid) -> ScalarField:
    """l evaluated from its definition <xi, xi - cos(theta) e>."""
    xi = embed(grid)
    e = np.array([0.0, 0.0, -1.0])
    return ScalarField(grid, np.einsum("ij,ij->i", xi, xi - np.cos(grid.theta) * e))


def covariant_gradient(field: ScalarField) -> np.ndarray:
    """Frame components (d_s h, (1/sin s) d_phi h); shape (N, 2)."""
    st = field.grid.stencils
    v = field.values
    return np.column_stack([st.d_s @ v, st.d_phi_hat @ v])


def covariant_hessian(field: FieldLike, grid: CapGrid = None) -> FrameHessian:
    """
    Covariant Hessian of a field in the orthonormal polar frame.

    Args:
        field: a ScalarField, or raw nodal values together with `grid`.
        grid: the grid of raw values; ignored for a ScalarField.

    Returns:
        FrameHessian: components (h_ss, h_sp, h_pp), one value per node.
    """
    grid = field.grid if isinstance(field, ScalarField) else grid
    st = grid.stencils
    v = _values(field)
    return FrameHessian(hss=st.hess_ss @ v, hsp=st.hess_sp @ v, hpp=st.hess_pp @ v)


def laplacian(field: ScalarField) -> np.ndarray:
    """
    Laplace-Beltrami operator on the cap, the trace of the covariant Hessian.

    Args:
        field: the function to differentiate.

    Returns:
        np.ndarray: nodal values in the grid's flat layout.
    """
    st = field.grid.stencils
    return st.hess_ss @ field.values + st.hess_pp @ field.values


def robin_residual(field: ScalarField) -> np.ndarray:
    """d_s h - cot(theta) h on the boundary ring, one value per boundary node."""
    grid = field.grid
    return (grid.stencils.robin @ field.values)[grid.boundary_nodes]


def integrate(field: FieldLike, grid: CapGrid = None) -> float:
    """
    Integral over the cap with the solid-angle quadrature.

    Args:
        field: a ScalarField, or raw nodal values together with `grid`.
        grid: the grid of raw values; ignored for a ScalarField.

    Returns:
        float: the weighted sum; exact for constants.
    """
    grid = field.grid if isinstance(field, ScalarField) else grid
    return float(np.dot(grid.weights, _values(field)))


def cap_area(theta: float) -> float:
    """
    Area 2 pi (1 - cos theta) of the spherical cap of half-angle theta.

    Args:
        theta: contact angle in (0, pi).

    Returns:
        float: the area; equals the sum of the quadrature weights.
    """
    return 2.0 * np.pi * (1.0 - np.cos(theta))


def rotate_by_pi(field: ScalarField) -> ScalarField:
    """h(s, phi + pi)."""
    return field.with_values(np.roll(field.as_array(), -(field.grid.nphi // 2), axis=0).ravel())


def evenness_project(field: ScalarField) -> ScalarField:
    """(h(s, phi) + h(s, phi + pi)) / 2."""
    return field.with_values(0.5 * (field.values + rotate_by_pi(field).values))


def evenness_defect(field: ScalarField) -> float:
    """
    Half the largest gap between h(s, phi) and h(s, phi + pi).

    Args:
        field: the function to test.

    Returns:
        float: 0.0 exactly for fields produced on the even path.
    """
    return float(np.max(np.abs(field.values - rotate_by_pi(field).values))) / 2.0


def neumann_transform(h: ScalarField) -> Tuple[ScalarField, np.ndarray]:
    """
    u = h / l and its normal derivative on the boundary ring.

    h satisfies the Robin condition exactly when d_s u vanishes on s = theta.
    """
    ell = ell_field(h.grid)
    u = h.with_values(h.values / ell.values)
    du = (h.grid.stencils.d_s @ u.values)[h.grid.boundary_nodes]
    return u, du
