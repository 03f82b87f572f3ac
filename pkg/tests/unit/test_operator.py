"""
Unit tests: curvature tensor, admissibility, residual and Jacobian of the
Hessian quotient operator.
"""

import logging
import math

import numpy as np
import pytest

from src.core.exceptions import ConeViolationError, PositivityError
from src.models.models import EquationForm
from src.services import cap_domain
from src.services import hessian_operator as op
from tests.utils.test_utils import (
    convex_support,
    horizontal_linear,
    log_table,
    make_grid,
    make_spec,
    positive_density,
)

log = logging.getLogger(__name__)

INDEX_PAIRS = [(1, 0), (2, 0), (2, 1)]


@pytest.fixture(scope="module")
def grid():
    return make_grid(theta=1.1)


def test_curvature_tensor_of_ell_is_identity(grid):
    W = op.curvature_tensor(cap_domain.ell_field(grid))
    assert np.allclose(W.lam1, 1.0, atol=1e-10)
    assert np.allclose(W.lam2, 1.0, atol=1e-10)
    assert W.min_eigenvalue == pytest.approx(1.0, abs=1e-10)
    assert np.allclose(W.sigma2, 1.0, atol=1e-10)


@pytest.mark.parametrize("k,l", INDEX_PAIRS)
@pytest.mark.parametrize("p", [1.0, 1.5, 3.0])
@pytest.mark.parametrize("form", list(EquationForm))
def test_ell_solves_the_rigidity_problem(grid, k, l, p, form):
    spec = make_spec(grid, k, l, p, form=form, experimental_angle=True)
    assert op.residual_norm(cap_domain.ell_field(grid), spec) < 1e-10
    assert op.residual(cap_domain.ell_field(grid), spec).norm < 1e-10


def test_residual_layout(grid):
    spec = make_spec(grid, 2, 0, 2.0, form=EquationForm.QUOTIENT)
    ell = cap_domain.ell_field(grid)
    doubled = spec.f.with_values(2.0 * spec.f.values)
    res = op.residual(ell, spec, density=doubled)
    assert res.boundary.shape == (grid.nphi,)
    assert np.allclose(res.interior[grid.interior_nodes], -1.0, atol=1e-10)
    assert np.all(res.interior[grid.boundary_nodes] == 0.0)
    assert np.allclose(res.stacked[grid.boundary_nodes], res.boundary)
    assert res.interior_norm == pytest.approx(1.0, abs=1e-10)


def test_non_positive_support_is_rejected(grid):
    ell = cap_domain.ell_field(grid)
    with pytest.raises(PositivityError):
        op.check_admissible(ell.with_values(ell.values - 2.0), 2)
    assert not op.is_admissible(ell.with_values(-ell.values), 1)


def test_cone_violation_is_reported():
    grid = make_grid(theta=math.pi / 3)
    h = cap_domain.sample(grid, lambda s, phi: 1.5 - s**2)
    with pytest.raises(ConeViolationError) as err:
        op.check_admissible(h, 1)
    assert err.value.node is not None
    assert err.value.margin < 0.0
    assert not op.is_admissible(h, 2)
    assert op.is_admissible(cap_domain.ell_field(grid), 2)


def test_quotient_gradient_at_identity(grid):
    W = op.curvature_tensor(cap_domain.ell_field(grid))
    g_ss, g_sp, g_pp = op.quotient_gradient_frame(W, 2, 0, EquationForm.F_FORM)
    assert np.allclose(g_ss, 0.5) and np.allclose(g_pp, 0.5)
    assert np.allclose(g_sp, 0.0)
    g_ss, _, g_pp = op.quotient_gradient_frame(W, 2, 0, EquationForm.QUOTIENT)
    assert np.allclose(g_ss, 1.0) and np.allclose(g_pp, 1.0)


def _jacobian_fd_error(h, spec, z, eps=1e-6):
    J = op.linearize(h, spec)
    plus = op.residual(h.with_values(h.values + eps * z), spec).stacked
    minus = op.residual(h.with_values(h.values - eps * z), spec).stacked
    fd = (plus - minus) / (2.0 * eps)
    return float(np.max(np.abs(J @ z - fd))), float(np.max(np.abs(fd)))


@pytest.mark.parametrize("k,l", INDEX_PAIRS)
@pytest.mark.parametrize("p", [1.0, 2.5])
@pytest.mark.parametrize("form", list(EquationForm))
def test_jacobian_matches_finite_differences(grid, k, l, p, form):
    h = convex_support(grid, seed=11 * k + l)
    f = positive_density(grid, seed=5, k=k, l=l, p=p)
    spec = make_spec(grid, k, l, p, f=f, form=form, experimental_angle=True)
    z = cap_domain.sample(grid, lambda s, phi: np.cos(s) * (1.0 + 0.3 * np.sin(s) * np.cos(phi))).values
    error, scale = _jacobian_fd_error(h, spec, z)
    log_table("Jacobian vs finite differences", ["k", "l", "p", "error"], [(k, l, p, error)])
    assert error < 1e-6 * max(1.0, scale)


@pytest.mark.parametrize("k,l", INDEX_PAIRS)
def test_horizontal_translations_span_the_kernel_for_p_one(grid, k, l):
    h = convex_support(grid, seed=3)
    spec = make_spec(grid, k, l, 1.0)
    J = op.linearize(h, spec)
    for a, b in [(1.0, 0.0), (0.0, 1.0)]:
        assert np.max(np.abs(J @ horizontal_linear(grid, a, b).values)) < 1e-9


def test_ellipticity_certificate(grid):
    spec = make_spec(grid, 2, 0, 1.0)
    cert = op.ellipticity_certificate(cap_domain.ell_field(grid), spec)
    assert cert["trace_bound"] == pytest.approx(1.0)
    assert cert["min_trace"] == pytest.approx(1.0, abs=1e-9)
    h = convex_support(grid, seed=7)
    cert = op.ellipticity_certificate(h, spec)
    assert cert["min_eigenvalue"] > 0.0
    assert cert["min_trace"] >= cert["trace_bound"] * (1.0 - 1e-12)


def test_doubled_cap_residual_in_quotient_form(grid):
    spec = make_spec(grid, 2, 0, 1.0, form=EquationForm.QUOTIENT)
    h = cap_domain.ell_field(grid)
    res = op.residual(h.with_values(2.0 * h.values), spec)
    assert np.allclose(res.interior[grid.interior_nodes], 3.0, atol=1e-10)
    assert np.allclose(res.boundary, 0.0, atol=1e-10)


@pytest.mark.parametrize("k,l", INDEX_PAIRS)
def test_quotient_residual_is_homogeneous_at_the_critical_exponent(grid, k, l):
    p = float(k - l + 1)
    f = positive_density(grid, seed=31, k=k, l=l, p=p)
    spec = make_spec(grid, k, l, p, f=f, form=EquationForm.QUOTIENT)
    h = convex_support(grid, seed=32)
    c = 1.7
    base = op.residual(h, spec).interior
    scaled = op.residual(h.with_values(c * h.values), spec).interior
    assert np.allclose(scaled, c ** (k - l) * base, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("k,l", INDEX_PAIRS)
@pytest.mark.parametrize("p", [1.0, 2.5])
def test_both_forms_share_their_zero_set(grid, k, l, p):
    h = convex_support(grid, seed=40 + k + l)
    spec = make_spec(grid, k, l, p, form=EquationForm.QUOTIENT, experimental_angle=True)
    W = op.curvature_tensor(h)
    exact = spec.f.with_values(op.quotient_value(W, k, l) / h.values ** (p - 1.0))
    for form in EquationForm:
        interior = op.residual(h, spec, density=exact, form=form).interior
        assert np.max(np.abs(interior)) < 1e-10

    other = positive_density(grid, seed=41, k=k, l=l, p=p)
    quotient = op.residual(h, spec, density=other, form=EquationForm.QUOTIENT).interior
    f_form = op.residual(h, spec, density=other, form=EquationForm.F_FORM).interior
    decided = np.abs(quotient) > 1e-12
    assert decided.any()
    assert np.array_equal(np.sign(quotient[decided]), np.sign(f_form[decided]))
