"""
Integration Test (Command line and run service)

Drives the capsolve commands end to end on small grids:
1. Configuration models: density sources, run configs and problem specs.
2. Config files (TOML and JSON) merged with command-line flags.
3. solve / validate / eigenvalue / christoffel-minkowski runs and their
   exit codes, artifacts and reports.
4. A run with an injected non-converging solver (exit code 3).
5. Acceptance criteria: one run through the CLI, then the sweeps over
   every solved case and the first-variation criterion.
"""

import json
import logging
import math
from pathlib import Path

import pytest
from pydantic import ValidationError
from typer.testing import CliRunner

from src.cli import reproduce
from src.cli.app import app, build_config, read_config_file
from src.cli.reproduce import ReproduceSettings, quick_settings, render, run_suite
from src.cli.run_service import RunService
from src.core.constants import (
    EXIT_BAD_CONFIG,
    EXIT_CHECK_FAILED,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
    FIRST_VARIATION_TOL,
)
from src.core.exceptions import ConfigError
from src.models.models import CheckResult, DensitySource, ProblemSpec, RunConfig, RunMode, SolveReport
from src.services import cap_domain
from src.services.validation_service import ValidationService
from tests.utils.test_utils import SMALL_NPHI, SMALL_NS, log_table, make_grid

log = logging.getLogger(__name__)

runner = CliRunner()
GRID_FLAGS = ["--ns", str(SMALL_NS), "--nphi", str(SMALL_NPHI)]


def _invoke(*args: str):
    result = runner.invoke(app, list(args))
    log.info("capsolve %s -> exit %d", " ".join(args), result.exit_code)
    return result


def _report(out: Path) -> dict:
    return json.loads((out / "report.json").read_text())


# ----------------------------------------------------------------------
# Models
# ----------------------------------------------------------------------
@pytest.mark.parametrize(
    "text,field,value",
    [
        ("rigidity", "builtin", "rigidity"),
        ("even-bump", "builtin", "even-bump"),
        ("data/f.CSV", "csv_path", Path("data/f.CSV")),
        ("2 * pow(ell, -3)", "expression", "2 * pow(ell, -3)"),
    ],
)
def test_density_source_parse(text, field, value):
    assert getattr(DensitySource.parse(text), field) == value


def test_density_source_needs_exactly_one_origin():
    with pytest.raises(ValidationError):
        DensitySource()
    with pytest.raises(ValidationError):
        DensitySource(builtin="constant", expression="1")


def test_run_config_defaults_and_modes():
    assert RunConfig().p == 4.0
    assert RunConfig(k=2, l=1).p == 3.0
    assert RunConfig(mode=RunMode.EIGENVALUE, k=2, l=1, p=7.0).p == 2.0
    cm = RunConfig(mode=RunMode.CHRISTOFFEL_MINKOWSKI, k=1, l=1, p=3.0)
    assert cm.l == 0
    assert cm.equation_k == 1
    assert RunConfig.model_validate({"schema": 1}).schema_version == 1


@pytest.mark.parametrize(
    "data",
    [
        {"nphi": 31},
        {"schema": 2},
        {"colour": "red"},
        {"k": 1, "l": 1},
        {"mode": "christoffel-minkowski", "k": 2},
    ],
)
def test_run_config_rejects(data):
    with pytest.raises(ValidationError):
        RunConfig.model_validate(data)


def test_problem_spec_angle_restriction():
    grid = make_grid(theta=math.pi / 3)
    f = cap_domain.ell_field(grid)
    with pytest.raises(ValidationError):
        ProblemSpec(k=2, l=0, p=2.0, theta=grid.theta, f=f)
    spec = ProblemSpec(k=2, l=0, p=2.0, theta=grid.theta, f=f, experimental_angle=True)
    assert spec.is_experimental
    assert spec.needs_even_path
    assert not ProblemSpec(k=2, l=0, p=1.0, theta=grid.theta, f=f).is_experimental
    with pytest.raises(ValidationError):
        ProblemSpec(k=2, l=0, p=4.0, theta=grid.theta, f=f.with_values(-f.values))
    with pytest.raises(ValidationError):
        ProblemSpec(k=2, l=0, p=4.0, theta=1.0, f=f)
    wide = make_grid(theta=1.8)
    with pytest.raises(ValidationError):
        ProblemSpec(k=2, l=0, p=4.0, theta=wide.theta, f=cap_domain.ell_field(wide))


# ----------------------------------------------------------------------
# Config files
# ----------------------------------------------------------------------
def test_toml_config_with_overrides(tmp_path):
    path = tmp_path / "run.toml"
    path.write_text('schema = 1\nk = 2\nl = 1\np = 3.5\ntheta = 0.8\nf = "bump"\nns = 20\nnphi = 40\n')
    config = build_config(RunMode.SOLVE, path, {"p": 5.0, "ns": None, "f": "1 + s"})
    assert (config.k, config.l, config.p, config.theta) == (2, 1, 5.0, 0.8)
    assert config.ns == 20
    assert config.f.expression == "1 + s"
    assert build_config(RunMode.SOLVE, path, {}).f.builtin == "bump"


def test_json_config_and_file_errors(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"k": 1, "l": 0, "f": "constant"}))
    assert read_config_file(path)["f"] == {"builtin": "constant"}
    with pytest.raises(ConfigError):
        read_config_file(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("k = = 2\n")
    with pytest.raises(ConfigError):
        read_config_file(broken)
    with pytest.raises(ConfigError):
        build_config(RunMode.SOLVE, None, {"nphi": 33})


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------
def test_solve_rigidity(tmp_path):
    out = tmp_path / "solve"
    result = _invoke("solve", "--k", "2", "--l", "0", "--p", "4", *GRID_FLAGS, "--out", str(out))
    assert result.exit_code == EXIT_OK
    for name in ("report.json", "h.csv", "grid.json", "surface.obj", "boundary.obj", "trace.csv"):
        assert (out / name).is_file()
    report = _report(out)
    assert report["checks_passed"]
    assert report["report"]["converged"]
    names = {check["name"] for check in report["report"]["checks"]}
    assert {"c0_bounds", "cap_rigidity", "boundary_contact", "curvature_problem_residual"} <= names


def test_bad_grid_exits_with_config_error(tmp_path):
    result = _invoke("solve", "--ns", "16", "--nphi", "31", "--out", str(tmp_path))
    assert result.exit_code == EXIT_BAD_CONFIG
    assert not (tmp_path / "report.json").exists()


def test_missing_even_flag_is_a_config_error(tmp_path):
    result = _invoke(
        "solve", "--k", "2", "--l", "0", "--p", "1", "--f", "even-bump", *GRID_FLAGS, "--out", str(tmp_path)
    )
    assert result.exit_code == EXIT_BAD_CONFIG


def test_validate_only(tmp_path):
    result = _invoke("validate", "--k", "2", "--p", "4", "--f", "bump", *GRID_FLAGS, "--out", str(tmp_path))
    assert result.exit_code == EXIT_OK
    report = _report(tmp_path)["report"]
    assert [c["name"] for c in report["checks"]] == ["f_condition", "homotopy_f_condition"]
    assert not (tmp_path / "h.csv").exists()


def test_eigenvalue_command(tmp_path):
    result = _invoke(
        "eigenvalue", "--k", "2", "--l", "1", "--theta", "0.9", *GRID_FLAGS, "--out", str(tmp_path)
    )
    assert result.exit_code == EXIT_OK
    assert "tau = " in result.output
    report = _report(tmp_path)["report"]
    assert report["tau"] == pytest.approx(1.0, rel=1e-6)
    assert any(c["name"] == "tau_bracket" and c["passed"] for c in report["checks"])


def test_christoffel_minkowski_command(tmp_path):
    result = _invoke(
        "christoffel-minkowski", "--k", "1", "--p", "3", "--f", "constant", *GRID_FLAGS, "--out", str(tmp_path)
    )
    assert result.exit_code == EXIT_OK
    checks = {c["name"]: c for c in _report(tmp_path)["report"]["checks"]}
    assert checks["area_measure"]["passed"]


def test_reports_are_deterministic(tmp_path):
    reports = []
    for name in ("first", "second"):
        out = tmp_path / name
        _invoke("solve", "--k", "1", "--p", "3", "--f", "bump", *GRID_FLAGS, "--out", str(out))
        reports.append(_report(out))
    assert reports[0]["report"] == reports[1]["report"]
    assert reports[0]["checks_passed"] == reports[1]["checks_passed"]


# ----------------------------------------------------------------------
# Run service with an injected solver
# ----------------------------------------------------------------------
class StalledSolver:
    """Continuation that never gets past t = 0."""

    def newton_solve(self, h0, density, spec, even=None):
        return h0, SolveReport(failure="stalled")

    def continuation_solve(self, spec, start=None, resume_from=None, max_steps=None):
        return cap_domain.ell_field(spec.grid), SolveReport(failure="stalled at t=0")

    def eigenvalue_solve(self, spec):
        return None, cap_domain.ell_field(spec.grid), SolveReport(failure="stalled")


def test_non_converged_run_exits_with_3(tmp_path):
    config = RunConfig(ns=SMALL_NS, nphi=SMALL_NPHI, out=tmp_path)
    outcome = RunService(StalledSolver(), ValidationService()).run(config)
    assert outcome.exit_code == EXIT_NOT_CONVERGED
    assert outcome.report.failure == "stalled at t=0"
    assert outcome.report.checks == []
    assert "report" in outcome.artifacts


def test_exit_code_rules():
    failed = CheckResult(name="x", passed=False)
    diagnostic = CheckResult(name="y", passed=False, asserted=False)
    assert RunService.exit_code(SolveReport(converged=True), RunMode.SOLVE) == EXIT_OK
    assert RunService.exit_code(SolveReport(converged=True, checks=[diagnostic]), RunMode.SOLVE) == EXIT_OK
    assert RunService.exit_code(SolveReport(converged=True, checks=[failed]), RunMode.SOLVE) == EXIT_CHECK_FAILED
    assert RunService.exit_code(SolveReport(), RunMode.SOLVE) == EXIT_NOT_CONVERGED
    assert RunService.exit_code(SolveReport(), RunMode.VALIDATE_ONLY) == EXIT_OK


# ----------------------------------------------------------------------
# Acceptance suite
# ----------------------------------------------------------------------
def test_reproduce_single_criterion(tmp_path):
    result = _invoke("reproduce", "--quick", "--criterion", "symmetric_function_suite", "--out", str(tmp_path))
    assert result.exit_code == EXIT_OK
    assert "PASS" in result.output


def test_suite_rendering():
    settings = quick_settings(ReproduceSettings(seed=3))
    assert (settings.ns, settings.nphi) == (24, 48)
    assert settings.count(50) == 5
    results = run_suite(settings, ["symmetric_function_suite"])
    assert [r.name for r in results] == ["symmetric_functions"]
    assert render(results) == EXIT_OK
    assert render([CheckResult(name="broken", passed=False)]) == EXIT_CHECK_FAILED


@pytest.fixture(scope="module")
def small_settings(tmp_path_factory):
    return ReproduceSettings(ns=SMALL_NS, nphi=SMALL_NPHI, sample_fraction=0.1,
                             out=tmp_path_factory.mktemp("reproduce"))


def test_reconstruction_sweeps_every_solved_case(small_settings):
    result = reproduce.reconstruction_suite(small_settings)
    names = {reproduce._case_name(k, l, p) for k, l, p, _ in reproduce.SOLVED_CASES}
    log_table("Reconstruction sweep", ["case", "passed"], [(n, c["passed"]) for n, c in result.detail["cases"].items()])
    assert set(result.detail["cases"]) == names
    assert result.passed


def test_minkowski_runs_on_every_converged_solution(small_settings):
    result = reproduce.minkowski_suite(small_settings)
    cases = result.detail["cases"]
    log_table("Minkowski sweep", ["case", "coarse", "fine"],
              [(n, c.get("coarse"), c.get("fine")) for n, c in cases.items()])
    assert len(cases) == len(reproduce.SOLVED_CASES)
    assert result.detail["solved"] == len(reproduce.SOLVED_CASES)
    for case in cases.values():
        assert max(case["fine"]) < 1e-2


def test_strict_convexity_covers_all_regimes(small_settings):
    result = reproduce.strict_convexity_suite(small_settings)
    regimes = result.detail["regimes"]
    assert set(regimes) == {reproduce._case_name(k, l, p) for k, l, p, _, _ in reproduce.CONVEXITY_REGIMES}
    assert {"k2_l1_p3", "k2_l0_p1", "k2_l1_p1"} <= set(regimes)
    assert result.passed


def test_mixed_quermassintegral_criterion(small_settings):
    result = reproduce.mixed_quermassintegral_suite(small_settings)
    assert result.value <= FIRST_VARIATION_TOL
    assert result.passed
