"""
Unit tests: the cap grid, its fitted stencils and the quadrature.

The stencils are exact on the span of {1, cos, sin} in each variable, so the
cap's own support function and the horizontal linear functions must come out
without discretisation error. A generic quadratic checks second-order
convergence.
"""

import inspect
import logging
import math

import numpy as np
import pytest

from src.core.exceptions import DomainError
from src.models.fields import ScalarField
from src.services import cap_domain
from tests.utils.test_utils import horizontal_linear, log_table, make_grid

log = logging.getLogger(__name__)

THETAS = [0.3, math.pi / 3, 1.2, 1.5]


@pytest.mark.parametrize(
    "theta,ns,nphi", [(0.0, 16, 32), (math.pi, 16, 32), (1.0, 3, 32), (1.0, 16, 31), (1.0, 16, 2)]
)
def test_build_grid_rejects_bad_input(theta, ns, nphi):
    with pytest.raises(DomainError):
        cap_domain.build_grid(theta, ns, nphi)


def test_grid_layout():
    grid = make_grid(theta=1.0, ns=10, nphi=12)
    assert grid.size == 120
    assert grid.shape == (12, 10)
    assert grid.s[-1] == 1.0
    assert grid.s[0] == pytest.approx(0.5 * grid.ds)
    assert grid.ds == pytest.approx(1.0 / 9.5)
    assert len(grid.boundary_nodes) == 12
    assert len(grid.interior_nodes) == 108
    assert grid.index(9, 3) == 3 * 10 + 9
    assert grid.index(0, 12) == 0
    assert np.all(grid.s_nodes[grid.boundary_nodes] == 1.0)
    assert grid.same_as(make_grid(theta=1.0, ns=10, nphi=12))
    assert not grid.same_as(make_grid(theta=1.0, ns=10, nphi=14))


def test_field_rejects_wrong_size_and_nan():
    grid = make_grid()
    with pytest.raises(DomainError):
        ScalarField(grid, np.ones(grid.size - 1))
    values = np.ones(grid.size)
    values[3] = np.nan
    with pytest.raises(DomainError):
        ScalarField(grid, values)


@pytest.mark.parametrize("theta", THETAS)
def test_quadrature_total_area_is_exact(theta):
    grid = make_grid(theta=theta)
    assert grid.weights.sum() == pytest.approx(cap_domain.cap_area(theta), rel=1e-13)
    assert cap_domain.integrate(np.ones(grid.size), grid) == pytest.approx(cap_domain.cap_area(theta), rel=1e-13)


def test_quadrature_of_cos_s():
    theta = 1.1
    grid = make_grid(theta=theta, ns=32, nphi=64)
    exact = math.pi * math.sin(theta) ** 2
    numeric = cap_domain.integrate(cap_domain.sample(grid, lambda s, phi: np.cos(s)))
    assert numeric == pytest.approx(exact, rel=1e-3)


@pytest.mark.parametrize("theta", THETAS)
def test_hessian_of_ell_is_exact(theta):
    grid = make_grid(theta=theta)
    ell = cap_domain.ell_field(grid)
    H = cap_domain.covariant_hessian(ell)
    assert np.max(np.abs(H.hss + ell.values - 1.0)) < 1e-10
    assert np.max(np.abs(H.hpp + ell.values - 1.0)) < 1e-10
    assert np.max(np.abs(H.hsp)) < 1e-10
    assert np.max(np.abs(cap_domain.robin_residual(ell))) < 1e-10


@pytest.mark.parametrize("theta", THETAS)
def test_horizontal_linear_functions_are_exact(theta):
    grid = make_grid(theta=theta)
    h = horizontal_linear(grid, a=0.7, b=-0.4)
    H = cap_domain.covariant_hessian(h)
    for component in (H.hss + h.values, H.hpp + h.values, H.hsp):
        assert np.max(np.abs(component)) < 1e-10
    assert np.max(np.abs(cap_domain.robin_residual(h))) < 1e-10


def test_gradient_of_horizontal_linear():
    grid = make_grid(theta=1.2)
    h = horizontal_linear(grid)
    grad = cap_domain.covariant_gradient(h)
    s, phi = grid.s_nodes, grid.phi_nodes
    assert np.allclose(grad[:, 0], np.cos(s) * np.cos(phi), atol=1e-10)
    assert np.allclose(grad[:, 1], -np.sin(phi), atol=1e-10)


def test_laplacian_of_first_harmonic():
    grid = make_grid(theta=1.3)
    field = cap_domain.sample(grid, lambda s, phi: np.cos(s))
    assert np.allclose(cap_domain.laplacian(field), -2.0 * field.values, atol=1e-10)


def _quadratic_hessian_error(ns, nphi, theta=1.0):
    grid = cap_domain.build_grid(theta, ns, nphi)
    s, phi = grid.s_nodes, grid.phi_nodes
    x1 = np.sin(s) * np.cos(phi)
    H = cap_domain.covariant_hessian(ScalarField(grid, x1**2))
    a_s, a_p = np.cos(s) * np.cos(phi), -np.sin(phi)
    exact = (2 * a_s * a_s - 2 * x1**2, 2 * a_s * a_p, 2 * a_p * a_p - 2 * x1**2)
    return max(np.max(np.abs(num - ref)) for num, ref in zip((H.hss, H.hsp, H.hpp), exact))


def test_hessian_converges_at_second_order():
    coarse = _quadratic_hessian_error(16, 32)
    fine = _quadratic_hessian_error(32, 64)
    log_table("Hessian error for x_1^2", ["ns", "max error"], [(16, coarse), (32, fine)])
    assert fine < coarse / 3.0


def test_ell_definitions_agree():
    grid = make_grid(theta=1.4)
    assert np.allclose(cap_domain.ell_field(grid).values, cap_domain.ell_from_embedding(grid).values, atol=1e-14)


def test_embedding_meets_the_plane_on_the_boundary():
    grid = make_grid(theta=0.8)
    xi = cap_domain.embed(grid)
    assert np.max(np.abs(xi[grid.boundary_nodes, 2])) < 1e-15
    assert np.all(xi[grid.interior_nodes, 2] > 0.0)
    normal = cap_domain.outer_normal(grid)
    assert np.allclose(np.linalg.norm(normal, axis=1), 1.0)
    e_s, e_phi = cap_domain.frame_vectors(grid)
    assert np.allclose(np.einsum("ij,ij->i", e_s, normal), 0.0, atol=1e-15)
    assert np.allclose(np.einsum("ij,ij->i", e_phi, normal), 0.0, atol=1e-15)


def test_evenness_operations():
    grid = make_grid()
    odd = horizontal_linear(grid, a=1.0, b=2.0)
    even = cap_domain.sample(grid, lambda s, phi: 1.0 + 0.1 * np.sin(s) ** 2 * np.cos(2 * phi))
    assert np.allclose(cap_domain.rotate_by_pi(odd).values, -odd.values, atol=1e-15)
    assert np.max(np.abs(cap_domain.evenness_project(odd).values)) < 1e-15
    assert cap_domain.evenness_defect(even) < 1e-15
    assert cap_domain.evenness_defect(odd) > 0.1
    mixed = even.with_values(even.values + odd.values)
    projected = cap_domain.evenness_project(mixed)
    assert cap_domain.evenness_defect(projected) == 0.0
    assert np.allclose(grid.stencils.evenness @ mixed.values, projected.values, atol=1e-15)


def test_neumann_transform():
    grid = make_grid(theta=1.1)
    ell = cap_domain.ell_field(grid)
    u, du = cap_domain.neumann_transform(ell)
    assert np.allclose(u.values, 1.0)
    assert np.max(np.abs(du)) < 1e-10
    bent = ell.with_values(ell.values * (1.0 + 0.1 * np.cos(grid.s_nodes)))
    _, du = cap_domain.neumann_transform(bent)
    assert np.allclose(du, -0.1 * math.sin(1.1), atol=1e-10)


@pytest.mark.parametrize("theta", THETAS)
def test_robin_residual_of_cos_s(theta):
    grid = make_grid(theta=theta)
    field = cap_domain.sample(grid, lambda s, phi: np.cos(s))
    assert np.allclose(cap_domain.robin_residual(field), -1.0 / math.sin(theta), atol=1e-10)


def test_gradient_of_ell():
    theta = math.pi / 3
    grid = make_grid(theta=theta)
    grad = cap_domain.covariant_gradient(cap_domain.ell_field(grid))
    assert np.allclose(grad[:, 0], math.cos(theta) * np.sin(grid.s_nodes), atol=1e-10)
    assert np.allclose(grad[:, 1], 0.0, atol=1e-10)


def test_ell_at_a_node_and_its_integral():
    theta = math.pi / 3
    grid = make_grid(theta=theta, ns=64, nphi=128)
    value = 1.0 - math.cos(theta) * math.cos(math.pi / 6)
    assert value == pytest.approx(0.566987, abs=1e-6)
    exact = cap_domain.cap_area(theta) - math.pi * math.cos(theta) * math.sin(theta) ** 2
    assert exact == pytest.approx(1.963495, abs=1e-6)
    assert cap_domain.integrate(cap_domain.ell_field(grid)) == pytest.approx(exact, rel=1e-3)

    errors = []
    for ns in (16, 32):
        coarse = make_grid(theta=theta, ns=ns, nphi=2 * ns)
        errors.append(abs(cap_domain.integrate(cap_domain.ell_field(coarse)) - exact))
    log_table("Quadrature of l", ["ns", "error"], zip((16, 32), errors))
    assert errors[1] < errors[0] / 2.5


@pytest.mark.parametrize(
    "fn",
    [
        cap_domain.covariant_hessian,
        cap_domain.laplacian,
        cap_domain.integrate,
        cap_domain.cap_area,
        cap_domain.evenness_defect,
    ],
)
def test_public_operations_document_arguments_and_result(fn):
    doc = inspect.getdoc(fn)
    assert doc and "Args:" in doc and "Returns:" in doc
