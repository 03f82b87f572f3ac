"""
The Hessian quotient operator on the cap.

For a support function h the curvature tensor is W = Hess h + h I. The
interior equation is either

    quotient form:  sigma_k(W) / sigma_l(W) - f h^(p-1) = 0
    F-form:         F(W) - f^(1/(k-l)) h^a = 0,   a = (p-1)/(k-l),

and the boundary ring carries the Robin rows d_s h - cot(theta) h = 0.
`residual` and `linearize` return vectors and matrices in that row layout:
interior equations at interior nodes, Robin rows at boundary nodes.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sparse

from src.core.constants import EIGEN_GAP_TOL
from src.core.exceptions import ConeViolationError, PositivityError
from src.models.fields import CurvatureField, ScalarField
from src.models.models import EquationForm, ProblemSpec
from src.services import cap_domain
from src.utils import symfunc

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OperatorResidual:
    """Interior equation residual (all nodes) and Robin residual (boundary ring)."""

    interior: np.ndarray
    boundary: np.ndarray
    stacked: np.ndarray

    @property
    def norm(self) -> float:
        return float(np.max(np.abs(self.stacked)))

    @property
    def interior_norm(self) -> float:
        return float(np.max(np.abs(self.interior)))


def curvature_tensor(h: ScalarField) -> CurvatureField:
    """W = covariant Hessian of h plus h times the identity, with its eigenframe."""
    hess = cap_domain.covariant_hessian(h)
    w_ss = hess.hss + h.values
    w_sp = hess.hsp
    w_pp = hess.hpp + h.values
    lam1, lam2, angle = symfunc.eigh_2x2(w_ss, w_sp, w_pp)
    return CurvatureField(
        grid=h.grid, w_ss=w_ss, w_sp=w_sp, w_pp=w_pp, lam1=lam1, lam2=lam2, angle=angle
    )


def check_admissible(h: ScalarField, k: int, W: Optional[CurvatureField] = None) -> CurvatureField:
    """Raise unless h > 0 and lambda(W) lies in Gamma_k at every node."""
    if not np.all(h.values > 0.0):
        node = h.argmin()
        raise PositivityError(node, float(h.values[node]))
    W = W if W is not None else curvature_tensor(h)
    margins = W.cone_margin(k)
    if not np.all(margins > 0.0):
        node = int(np.argmin(margins))
        raise ConeViolationError(k, node=node, margin=float(margins[node]))
    return W


def is_admissible(h: ScalarField, k: int) -> bool:
    try:
        check_admissible(h, k)
    except (PositivityError, ConeViolationError):
        return False
    return True


def _sigma(W: CurvatureField, m: int) -> np.ndarray:
    if m == 0:
        return np.ones_like(W.w_ss)
    if m == 1:
        return W.sigma1
    return W.sigma2


def quotient_value(W: CurvatureField, k: int, l: int) -> np.ndarray:
    return _sigma(W, k) / _sigma(W, l)


def _stack(h: ScalarField, interior: np.ndarray) -> OperatorResidual:
    grid = h.grid
    boundary = cap_domain.robin_residual(h)
    stacked = interior.copy()
    stacked[grid.boundary_nodes] = boundary
    interior = interior.copy()
    interior[grid.boundary_nodes] = 0.0
    return OperatorResidual(interior=interior, boundary=boundary, stacked=stacked)


def residual(
    h: ScalarField,
    spec: ProblemSpec,
    density: Optional[ScalarField] = None,
    form: Optional[EquationForm] = None,
    W: Optional[CurvatureField] = None,
) -> OperatorResidual:
    """Residual of the equation in the selected form; density overrides spec.f."""
    f = (density if density is not None else spec.f).values
    form = form or spec.form
    W = check_admissible(h, spec.k, W)
    k, l = spec.k, spec.l
    if form == EquationForm.QUOTIENT:
        rhs = f if spec.p == 1.0 else f * h.values ** (spec.p - 1.0)
        interior = quotient_value(W, k, l) - rhs
    else:
        F = quotient_value(W, k, l) ** (1.0 / (k - l))
        f_hat = f ** (1.0 / (k - l))
        rhs = f_hat if spec.p == 1.0 else f_hat * h.values**spec.a
        interior = F - rhs
    return _stack(h, interior)


def residual_norm(h: ScalarField, spec: ProblemSpec, density: Optional[ScalarField] = None) -> float:
    return residual(h, spec, density).norm


def quotient_gradient_frame(W: CurvatureField, k: int, l: int, form: EquationForm):
    """
    Derivative of the interior operator with respect to W, as frame
    components (G_ss, G_sp, G_pp) of a symmetric matrix.

    Computed from the eigenvalue gradient in the eigenframe and rotated
    back; nearly equal eigenvalues share the mean of the two entries.
    """
    lam = np.stack([W.lam1, W.lam2], axis=-1)
    grad = symfunc.quotient_F_gradient(lam, k, l)
    if form == EquationForm.QUOTIENT:
        F = symfunc.quotient_F(lam, k, l)
        grad = (k - l) * (F ** (k - l - 1))[:, None] * grad
    g1, g2 = grad[:, 0], grad[:, 1]
    close = np.abs(W.lam1 - W.lam2) < EIGEN_GAP_TOL
    mean = 0.5 * (g1 + g2)
    g1 = np.where(close, mean, g1)
    g2 = np.where(close, mean, g2)
    c, s = np.cos(W.angle), np.sin(W.angle)
    g_ss = g1 * c * c + g2 * s * s
    g_sp = (g1 - g2) * c * s
    g_pp = g1 * s * s + g2 * c * c
    return g_ss, g_sp, g_pp


def linearize(
    h: ScalarField,
    spec: ProblemSpec,
    density: Optional[ScalarField] = None,
    form: Optional[EquationForm] = None,
) -> sparse.csr_matrix:
    """
    Jacobian of `residual` at h:

        L z = G^ij (z_ij + z delta_ij) - c(h) z    (interior rows)
        L z = d_s z - cot(theta) z                  (boundary rows)

    with c = a f_hat h^(a-1) in F-form and (p-1) f h^(p-2) in quotient form;
    the zeroth-order term is dropped exactly when p = 1.
    """
    grid = h.grid
    st = grid.stencils
    f = (density if density is not None else spec.f).values
    form = form or spec.form
    W = check_admissible(h, spec.k)
    g_ss, g_sp, g_pp = quotient_gradient_frame(W, spec.k, spec.l, form)

    diag = sparse.diags
    L = (
        diag(g_ss) @ st.hess_ss
        + diag(2.0 * g_sp) @ st.hess_sp
        + diag(g_pp) @ st.hess_pp
        + diag(g_ss + g_pp)
    )
    if spec.p != 1.0:
        if form == EquationForm.QUOTIENT:
            zeroth = (spec.p - 1.0) * f * h.values ** (spec.p - 2.0)
        else:
            f_hat = f ** (1.0 / (spec.k - spec.l))
            zeroth = spec.a * f_hat * h.values ** (spec.a - 1.0)
        L = L - diag(zeroth)

    interior_rows = diag((~grid.boundary_mask).astype(float))
    return (interior_rows @ L + st.robin).tocsr()


def ellipticity_certificate(h: ScalarField, spec: ProblemSpec) -> dict:
    """Smallest eigenvalue and smallest trace of (F^ij) over the nodes."""
    W = check_admissible(h, spec.k)
    lam = np.stack([W.lam1, W.lam2], axis=-1)
    grad = symfunc.quotient_F_gradient(lam, spec.k, spec.l)
    return {
        "min_eigenvalue": float(grad.min()),
        "min_trace": float(grad.sum(axis=-1).min()),
        "trace_bound": symfunc.trace_lower_bound(spec.n, spec.k, spec.l),
    }
