"""
Run service module.

RunService turns a RunConfig into a solved problem, a verified report and
the output artifacts. The solver and the validation suite are injected, so
the command layer and the tests decide which implementations run.
"""

import logging
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from src.core.constants import (
    ARTIFACT_NAMES,
    EIGEN_RESIDUAL_TOL,
    EXIT_BAD_CONFIG,
    EXIT_CHECK_FAILED,
    EXIT_NOT_CONVERGED,
    EXIT_OK,
)
from src.core.density_factory import get_density
from src.core.exceptions import BoundViolationError, ConfigError, ConvexityError, DomainError
from src.interfaces.solver_interface import ISolver, IValidationService
from src.models.fields import EmbeddedSurface, ScalarField
from src.models.models import CheckResult, EquationForm, ProblemSpec, RunConfig, RunMode, SolveReport
from src.services import cap_domain, geometry_service, hessian_operator
from src.services.continuation_service import ContinuationSolver, tau_bracket
from src.utils import field_io

logger = logging.getLogger(__name__)

RIGIDITY_TOL = 1e-6


@dataclass
class RunOutcome:
    """Exit status, report and written files of one run."""

    exit_code: int
    report: Optional[SolveReport] = None
    solution: Optional[ScalarField] = None
    artifacts: Dict[str, Path] = field(default_factory=dict)


class RunService:
    """
    Orchestrates problem construction, solving, verification and export.
    """

    def __init__(self, solver: ISolver, validator: IValidationService):
        """
        Args:
            solver (ISolver): Continuation/eigenvalue solver.
            validator (IValidationService): Verification suite run on the result.
        """
        self.solver = solver
        self.validator = validator
        self.logger = logger

    # ------------------------------------------------------------------
    # Problem construction
    # ------------------------------------------------------------------
    def build_problem(self, config: RunConfig) -> Tuple[ProblemSpec, ScalarField]:
        """
        Build the ProblemSpec of a run.

        Args:
            config (RunConfig): Validated run configuration.

        Returns:
            Tuple[ProblemSpec, ScalarField]: The ProblemSpec actually solved and the
            density as given by the user (they differ in CM mode, where the
            density is rescaled by C(n, n-k)).
        """
        try:
            grid = cap_domain.build_grid(config.theta, config.ns, config.nphi)
            if config.mode == RunMode.CHRISTOFFEL_MINKOWSKI:
                # Builtins are normalised against H_{n-k}(I) = 1.
                user_f = get_density(config.f, grid, 0, 0, config.p, config.n)
            else:
                user_f = get_density(config.f, grid, config.k, config.l, config.p, config.n)
            options = dict(
                form=config.form, even=config.even, experimental_angle=config.experimental_angle
            )
            if config.mode == RunMode.CHRISTOFFEL_MINKOWSKI:
                spec = ContinuationSolver.christoffel_minkowski_spec(
                    config.k, config.p, user_f, n=config.n, **options
                )
            else:
                spec = ProblemSpec(
                    n=config.n, k=config.k, l=config.l, p=config.p, theta=config.theta,
                    f=user_f, **options,
                )
        except (ValidationError, DomainError) as exc:
            raise ConfigError(str(exc)) from exc
        return spec, user_f

    # ------------------------------------------------------------------
    # Entry point
    # ------------------------------------------------------------------
    def run(self, config: RunConfig) -> RunOutcome:
        started_at = datetime.now(timezone.utc)
        clock = time.perf_counter()
        try:
            spec, user_f = self.build_problem(config)
            h, report, tau = self._dispatch(spec, config)
        except ConfigError as exc:
            self.logger.critical("Invalid configuration: %s", exc)
            return RunOutcome(exit_code=EXIT_BAD_CONFIG)

        surface = None
        if h is not None and report.converged:
            surface = self.verify_solution(h, spec, report, config, user_f, tau)

        exit_code = self.exit_code(report, config.mode)
        wall_time = time.perf_counter() - clock
        artifacts = self.write_artifacts(config, h, surface, report, started_at, wall_time)
        self.logger.info("Run finished with exit code %d", exit_code)
        return RunOutcome(exit_code=exit_code, report=report, solution=h, artifacts=artifacts)

    def _dispatch(self, spec: ProblemSpec, config: RunConfig):
        self.logger.info(
            "Mode %s: k=%d l=%d p=%.6g theta=%.6g grid %dx%d form=%s even=%s",
            config.mode.value, spec.k, spec.l, spec.p, spec.theta,
            config.ns, config.nphi, spec.form.value, spec.even,
        )
        if config.mode == RunMode.EIGENVALUE:
            h, report, tau = self._run_eigenvalue(spec)
        elif config.mode == RunMode.VALIDATE_ONLY:
            h, report, tau = None, self._run_validate_only(spec), None
        elif config.mode in (RunMode.SOLVE, RunMode.CHRISTOFFEL_MINKOWSKI):
            h, report = self._run_continuation(spec, config)
            tau = None
        else:
            raise ConfigError(f"mode {config.mode.value} is not handled by the run service")
        return h, report, tau

    @staticmethod
    def exit_code(report: SolveReport, mode: RunMode) -> int:
        if mode != RunMode.VALIDATE_ONLY and not report.converged:
            return EXIT_NOT_CONVERGED
        return EXIT_OK if report.checks_passed else EXIT_CHECK_FAILED

    # ------------------------------------------------------------------
    # Modes
    # ------------------------------------------------------------------
    def _run_continuation(self, spec: ProblemSpec, config: RunConfig):
        if spec.even and not spec.needs_even_path:
            self.logger.info("Even flag set outside 1 <= p < k-l+1; iterates are still projected")
        try:
            h, report = self.solver.continuation_solve(spec, resume_from=config.resume)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
        if not report.converged:
            self.logger.error("Continuation did not converge: %s", report.failure)
        return h, report

    def _run_eigenvalue(self, spec: ProblemSpec):
        try:
            tau, h, report = self.solver.eigenvalue_solve(spec)
        except BoundViolationError as exc:
            self.logger.error("%s", exc)
            # The solve itself converged; only the bracket assertion failed.
            report = SolveReport(
                converged=True, failure=str(exc),
                checks=[CheckResult(name=exc.check, passed=False, node=exc.node, detail={"error": str(exc)})],
            )
            report.tau_bracket = list(tau_bracket(spec))
            return None, report, None
        if not report.converged:
            self.logger.error("Eigenvalue solve did not converge: %s", report.failure)
            return h, report, tau
        lower, upper = report.tau_bracket
        report.checks.append(CheckResult(
            name="tau_bracket", passed=lower <= tau <= upper, value=tau,
            detail={"lower": lower, "upper": upper},
        ))
        return h, report, tau

    def _run_validate_only(self, spec: ProblemSpec) -> SolveReport:
        """Check the hypotheses on the density without solving."""
        report = SolveReport(experimental=spec.is_experimental)
        f_check = self.validator.check_f_condition(spec.f, spec)
        report.checks.append(f_check)
        report.checks.append(self.validator.check_homotopy_f_condition(spec.f, spec))
        if spec.needs_even_path:
            report.checks.append(self.validator.check_start_kernel(spec))
        if spec.is_eigenvalue_problem:
            report.tau_bracket = list(tau_bracket(spec))
        report.measures["density"] = {"min": spec.f.min(), "max": spec.f.max()}
        report.converged = True
        return report

    # ------------------------------------------------------------------
    # Verification of a converged solution
    # ------------------------------------------------------------------
    def verify_solution(
        self,
        h: ScalarField,
        spec: ProblemSpec,
        report: SolveReport,
        config: RunConfig,
        user_f: ScalarField,
        tau: Optional[float] = None,
    ) -> Optional[EmbeddedSurface]:
        """
        Append the verification entries and geometric measures to `report`.

        Returns:
            Optional[EmbeddedSurface]: The reconstructed surface when h is
            strictly convex, else None.
        """
        checks: List[CheckResult] = report.checks
        validator = self.validator

        checks.append(validator.check_admissible(h, spec))
        if tau is None:
            report.c0_check = validator.check_c0_bounds(h, spec)
            checks.append(report.c0_check)
        f_check = validator.check_f_condition(spec.f, spec)
        checks.append(f_check)
        checks.append(validator.check_strict_convexity(h, f_check.passed))
        checks.append(validator.check_log_gradient(h, spec))
        if spec.even:
            checks.append(validator.check_evenness(h))
        checks.append(validator.check_neumann_transform(h))
        if config.f.builtin == "constant" and spec.p == 1.0:
            checks.append(validator.check_rigidity(h))
        if config.f.builtin == "rigidity" and tau is None and config.mode == RunMode.SOLVE:
            checks.append(self._cap_rigidity(h))
        if config.uniqueness and tau is None:
            checks.append(validator.check_uniqueness(spec))

        report.measures.update(self._measures(h))
        for r in (0, 1):
            checks.append(self._minkowski(h, r))
        surface, geometric = self._reconstruction(h, spec, report, config, tau)
        checks.extend(geometric)
        if config.mode == RunMode.CHRISTOFFEL_MINKOWSKI:
            checks.append(self._area_measure(h, spec, config, user_f))
        return surface

    def _cap_rigidity(self, h: ScalarField) -> CheckResult:
        ell = cap_domain.ell_field(h.grid)
        value = float(np.max(np.abs(h.values - ell.values)))
        return CheckResult(
            name="cap_rigidity", passed=value <= RIGIDITY_TOL, value=value,
            node=int(np.argmax(np.abs(h.values - ell.values))),
            detail={"tolerance": RIGIDITY_TOL},
        )

    def _measures(self, h: ScalarField) -> Dict[str, Any]:
        measures: Dict[str, Any] = {
            f"V_{k}": geometry_service.quermassintegral(h, k) for k in range(geometry_service.DIMENSION + 1)
        }
        measures["radii"] = geometry_service.radii(h)
        return measures

    def _minkowski(self, h: ScalarField, r: int) -> CheckResult:
        lhs, rhs = geometry_service.minkowski_sides(h, r)
        defect = abs(lhs - rhs) / max(abs(lhs), abs(rhs))
        return CheckResult(
            name=f"minkowski_r{r}", passed=defect <= 1e-3, asserted=False, value=defect,
            detail={"lhs": lhs, "rhs": rhs},
        )

    def _relative_tolerance(self, h: ScalarField, spec: ProblemSpec, config: RunConfig, tau) -> float:
        """Pointwise relative tolerance implied by the Newton tolerance."""
        W = hessian_operator.curvature_tensor(h)
        interior = h.grid.interior_nodes
        quotient = hessian_operator.quotient_value(W, spec.k, spec.l)[interior]
        r = spec.k - spec.l
        if tau is not None:
            return 10.0 * EIGEN_RESIDUAL_TOL / float(quotient.min())
        if spec.form == EquationForm.F_FORM:
            return 10.0 * r * config.newton_tol / float((quotient ** (1.0 / r)).min())
        return 10.0 * config.newton_tol / float(quotient.min())

    def _reconstruction(
        self, h: ScalarField, spec: ProblemSpec, report: SolveReport, config: RunConfig, tau
    ) -> Tuple[Optional[EmbeddedSurface], List[CheckResult]]:
        try:
            surface = geometry_service.reconstruct(h)
        except ConvexityError as exc:
            self.logger.info("No reconstruction: %s", exc)
            return None, []
        report.measures["boundary_contact"] = contact = geometry_service.boundary_contact(surface)
        residual = geometry_service.curvature_problem_residual(surface, spec.f, spec, tau)
        interior = h.grid.interior_nodes
        worst = float(np.max(np.abs(residual[interior])))
        tolerance = self._relative_tolerance(h, spec, config, tau)
        contact_tol = max(10.0 * config.newton_tol, 1e-12)
        return surface, [
            CheckResult(
                name="boundary_contact", passed=contact["max_height"] <= contact_tol,
                value=contact["max_height"], detail={**contact, "tolerance": contact_tol},
            ),
            CheckResult(
                name="curvature_problem_residual", passed=worst <= tolerance, value=worst,
                node=int(interior[np.argmax(np.abs(residual[interior]))]),
                detail={"tolerance": tolerance},
            ),
        ]

    def _area_measure(
        self, h: ScalarField, spec: ProblemSpec, config: RunConfig, user_f: ScalarField
    ) -> CheckResult:
        """l^p h^(1-p) H_{n-k}(W) against l^p f for the Christoffel-Minkowski run."""
        density = geometry_service.area_measure_density(h, config.k, spec.p)
        ell = cap_domain.ell_field(h.grid).values
        target = ell**spec.p * user_f.values
        interior = h.grid.interior_nodes
        defect = np.abs(density.values / target - 1.0)[interior]
        tolerance = self._relative_tolerance(h, spec, config, None)
        return CheckResult(
            name="area_measure", passed=float(defect.max()) <= tolerance, value=float(defect.max()),
            detail={"tolerance": tolerance},
        )

    # ------------------------------------------------------------------
    # Artifacts
    # ------------------------------------------------------------------
    def write_artifacts(
        self,
        config: RunConfig,
        h: Optional[ScalarField],
        surface: Optional[EmbeddedSurface],
        report: SolveReport,
        started_at: datetime,
        wall_time: float,
    ) -> Dict[str, Path]:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        written: Dict[str, Path] = {}

        if h is not None:
            written["field"] = field_io.write_field_csv(h, out / ARTIFACT_NAMES["field"])
            written["grid"] = field_io.write_grid_json(h.grid, out / ARTIFACT_NAMES["grid"])
            if surface is not None:
                written["surface"] = geometry_service.export_obj(surface, out / ARTIFACT_NAMES["surface"])
                written["boundary"] = geometry_service.export_boundary_polyline(
                    surface, out / ARTIFACT_NAMES["boundary"]
                )
        written["trace"] = field_io.write_trace_csv(report.steps, out / ARTIFACT_NAMES["trace"])

        payload = {
            "config": config.model_dump(mode="json", by_alias=True),
            "report": report.model_dump(mode="json", exclude={"wall_time"}),
            "checks_passed": report.checks_passed,
            "timestamp": {
                "started": started_at.isoformat(),
                "wall_time": wall_time,
                "solver_wall_time": report.wall_time,
            },
        }
        written["report"] = field_io.write_report_json(payload, out / ARTIFACT_NAMES["report"])
        self.logger.info("Artifacts written to %s: %s", out, ", ".join(sorted(written)))
        return written

