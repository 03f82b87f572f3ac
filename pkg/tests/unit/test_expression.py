"""
Unit tests: the density expression grammar and the density factory.
"""

import logging
import math

import numpy as np
import pytest

from src.core.density_factory import builtin_density, get_density, get_worker_count
from src.core.exceptions import ConfigError
from src.models.models import DensitySource
from src.services import cap_domain
from src.utils.expression import evaluate_on_grid, parse_expression
from tests.utils.test_utils import make_grid

log = logging.getLogger(__name__)


@pytest.fixture(scope="module")
def grid():
    return make_grid(theta=1.0)


@pytest.mark.parametrize(
    "text,expected",
    [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("2 ^ 3 ^ 2", 512.0),
        ("8 / 4 / 2", 1.0),
        ("-(2 + 1)", -3.0),
        ("6 × 2 ÷ 4", 3.0),
        ("5 − 2", 3.0),
        ("−(2 + 1) − 1", -4.0),
        ("pow(2, 10)", 1024.0),
        ("sqrt(16) + exp(0) + log(1)", 5.0),
        ("cos(pi) + sin(0)", -1.0),
        ("const(2.5)", 2.5),
        ("1.5e1", 15.0),
    ],
)
def test_arithmetic(text, expected):
    assert parse_expression(text)({}) == pytest.approx(expected)


def test_variables_on_the_grid(grid):
    s, phi = grid.s_nodes, grid.phi_nodes
    field = evaluate_on_grid("1 + 0.5 * sin(s) * cos(phi)", grid)
    assert np.allclose(field.values, 1.0 + 0.5 * np.sin(s) * np.cos(phi))
    ell = evaluate_on_grid("ell", grid)
    assert np.allclose(ell.values, cap_domain.ell_field(grid).values)


def test_rigidity_expression_matches_the_builtin(grid):
    field = evaluate_on_grid("pow(ell, -3)", grid)
    assert np.allclose(field.values, builtin_density("rigidity", grid, 2, 0, 4.0).values)


def test_constant_expression_is_broadcast(grid):
    field = evaluate_on_grid("2", grid)
    assert field.values.shape == (grid.size,)
    assert np.all(field.values == 2.0)


@pytest.mark.parametrize("text", ["1 +", "foo(s)", "s s", "sin s", "(1 + 2"])
def test_syntax_errors(text):
    with pytest.raises(ConfigError):
        parse_expression(text)


def test_non_finite_values_are_rejected(grid):
    with pytest.raises(ConfigError):
        evaluate_on_grid("1 / (s - s)", grid)


def test_builtin_densities(grid):
    ell = cap_domain.ell_field(grid).values
    rigidity = builtin_density("rigidity", grid, 2, 1, 3.0)
    assert np.allclose(rigidity.values, 0.5 * ell**-2.0)
    assert np.allclose(builtin_density("constant", grid, 2, 1, 3.0).values, 0.5)
    bump = builtin_density("bump", grid, 2, 0, 2.0)
    assert np.all(bump.values >= builtin_density("rigidity", grid, 2, 0, 2.0).values)
    even = builtin_density("even-bump", grid, 2, 0, 2.0)
    assert cap_domain.evenness_defect(even) < 1e-14
    assert cap_domain.evenness_defect(bump) > 1e-3
    with pytest.raises(ConfigError):
        builtin_density("spiral", grid, 2, 0, 2.0)


def test_get_density_dispatch(grid, tmp_path):
    expr = get_density(DensitySource(expression="1 + s"), grid, 2, 0, 2.0)
    assert np.allclose(expr.values, 1.0 + grid.s_nodes)
    builtin = get_density(DensitySource(builtin="constant"), grid, 2, 0, 2.0)
    assert np.allclose(builtin.values, 1.0)
    with pytest.raises(ConfigError):
        get_density(DensitySource(expression="cos(s) - 1"), grid, 2, 0, 2.0)
    with pytest.raises(ConfigError):
        get_density(DensitySource(csv_path=tmp_path / "missing.csv"), grid, 2, 0, 2.0)


def test_worker_count(monkeypatch):
    monkeypatch.delenv("CAPSOLVE_THREADS", raising=False)
    assert get_worker_count() == 1
    monkeypatch.setenv("CAPSOLVE_THREADS", "4")
    assert get_worker_count() == 4
    for raw in ("zero", "0"):
        monkeypatch.setenv("CAPSOLVE_THREADS", raw)
        with pytest.raises(ConfigError):
            get_worker_count()


def test_pi_is_a_keyword():
    assert parse_expression("2 * pi")({}) == pytest.approx(2.0 * math.pi)
