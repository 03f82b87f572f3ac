"""Dataclasses for the discretised cap: grid, nodal fields and derived tensors."""

from dataclasses import dataclass, field, replace
from typing import Tuple

import numpy as np
import scipy.sparse as sp

from src.core.constants import GRID_TOL_FACTOR
from src.core.exceptions import DomainError


@dataclass(frozen=True, eq=False)
class StencilSet:
    """Sparse N x N operators acting on flattened nodal values."""

    d_s: sp.csr_matrix  # d/ds
    d_phi_hat: sp.csr_matrix  # (1/sin s) d/dphi
    hess_ss: sp.csr_matrix
    hess_sp: sp.csr_matrix
    hess_pp: sp.csr_matrix
    robin: sp.csr_matrix  # boundary rows only: d/ds - cot(theta)
    evenness: sp.csr_matrix  # h -> (h + h o R_pi) / 2


@dataclass(frozen=True, eq=False)
class CapGrid:
    """
    Geodesic polar grid on the spherical cap of opening angle theta.

    Nodes are flattened phi-major with s running fastest: node (i, j) has
    index j * ns + i. The last ring i = ns - 1 sits exactly on s = theta.
    """

    theta: float
    ns: int
    nphi: int
    s: np.ndarray
    phi: np.ndarray
    ds: float
    dphi: float
    weights: np.ndarray
    stencils: StencilSet = field(repr=False)

    @property
    def size(self) -> int:
        return self.ns * self.nphi

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nphi, self.ns)

    @property
    def s_nodes(self) -> np.ndarray:
        return np.tile(self.s, self.nphi)

    @property
    def phi_nodes(self) -> np.ndarray:
        return np.repeat(self.phi, self.ns)

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[:, -1] = True
        return mask.ravel()

    @property
    def boundary_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.boundary_mask)

    @property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)

    @property
    def grid_tolerance(self) -> float:
        return GRID_TOL_FACTOR * (self.ds**2 + self.dphi**2)

    def index(self, i: int, j: int) -> int:
        return (j % self.nphi) * self.ns + i

    def same_as(self, other: "CapGrid") -> bool:
        return (
            self.ns == other.ns
            and self.nphi == other.nphi
            and abs(self.theta - other.theta) <= 1e-15
        )


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a function on a CapGrid."""

    grid: CapGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        if values.shape != (self.grid.size,):
            raise DomainError(
                f"field has {values.size} values, grid has {self.grid.size} nodes"
            )
        if not np.all(np.isfinite(values)):
            raise DomainError("field contains non-finite values")
        object.__setattr__(self, "values", values)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return replace(self, values=values)

    def as_array(self) -> np.ndarray:
        """Values reshaped to (nphi, ns)."""
        return self.values.reshape(self.grid.shape)

    def min(self) -> float:
        return float(self.values.min())

    def max(self) -> float:
        return float(self.values.max())

    def argmin(self) -> int:
        return int(self.values.argmin())


@dataclass(frozen=True, eq=False)
class FrameHessian:
    """Covariant Hessian components in the frame (d_s, (1/sin s) d_phi)."""

    hss: np.ndarray
    hsp: np.ndarray
    hpp: np.ndarray

    @property
    def trace(self) -> np.ndarray:
        return self.hss + self.hpp


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """
    W = Hess h + h I in the orthonormal frame (e_s, e_phi_hat), per node,
    with its eigen-decomposition.
    """

    grid: CapGrid
    w_ss: np.ndarray
    w_sp: np.ndarray
    w_pp: np.ndarray
    lam1: np.ndarray  # larger eigenvalue
    lam2: np.ndarray
    angle: np.ndarray  # eigenvector of lam1 is (cos angle, sin angle)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.stack([self.lam1, self.lam2], axis=-1)

    @property
    def sigma1(self) -> np.ndarray:
        return self.w_ss + self.w_pp

    @property
    def sigma2(self) -> np.ndarray:
        return self.w_ss * self.w_pp - self.w_sp**2

    def cone_margin(self, k: int) -> np.ndarray:
        """Per-node min over 1 <= i <= k of sigma_i(lambda)."""
        if k == 1:
            return self.sigma1
        return np.minimum(self.sigma1, self.sigma2)

    @property
    def min_eigenvalue(self) -> float:
        return float(self.lam2.min())


@dataclass(frozen=True, eq=False)
class EmbeddedSurface:
    """Reconstructed capillary hypersurface: points X(xi) and the outer normal."""

    grid: CapGrid
    points: np.ndarray  # (N, 3)
    normals: np.ndarray  # (N, 3)
    curvatures: np.ndarray  # (N, 2), kappa_i = 1 / lambda_i(W)
    h: ScalarField
