"""
Service interfaces module.

Protocols for the solver and the validation suite. The run service depends
on these contracts only, so tests can inject fakes or reduced solvers.
"""

from abc import abstractmethod
from pathlib import Path
from typing import Optional, Protocol, Tuple

from src.models.fields import ScalarField
from src.models.models import CheckResult, ProblemSpec, SolveReport


class ISolver(Protocol):
    """Interface for the continuation solver."""

    @abstractmethod
    def newton_solve(
        self, h0: ScalarField, density: ScalarField, spec: ProblemSpec, even: Optional[bool] = None
    ) -> Tuple[ScalarField, SolveReport]:
        """
        Damped Newton from an admissible start.

        Args:
            h0 (ScalarField): Positive admissible start.
            density (ScalarField): Right-hand side density.
            spec (ProblemSpec): Indices, exponent and form.
            even (bool, optional): Project iterates on capillary even fields.

        Returns:
            Tuple[ScalarField, SolveReport]: Final iterate and its report.
        """

    @abstractmethod
    def continuation_solve(
        self,
        spec: ProblemSpec,
        start: Optional[ScalarField] = None,
        resume_from: Optional[Path] = None,
        max_steps: Optional[int] = None,
    ) -> Tuple[ScalarField, SolveReport]:
        """Homotopy continuation from h = l to the prescribed density."""

    @abstractmethod
    def eigenvalue_solve(self, spec: ProblemSpec) -> Tuple[Optional[float], ScalarField, SolveReport]:
        """Solve for (tau, h) when p = k - l + 1."""


class IValidationService(Protocol):
    """Interface for the verification suite."""

    @abstractmethod
    def check_c0_bounds(self, h: ScalarField, spec: ProblemSpec) -> CheckResult:
        """Closed-form C0 bracket."""

    @abstractmethod
    def check_f_condition(self, f: ScalarField, spec: ProblemSpec) -> CheckResult:
        """Convexity hypothesis on the density."""

    @abstractmethod
    def check_strict_convexity(
        self, h: ScalarField, f_condition_passed: Optional[bool] = None
    ) -> CheckResult:
        """Positive definiteness of W."""

    @abstractmethod
    def check_uniqueness(self, spec: ProblemSpec) -> CheckResult:
        """Multi-start agreement."""

    @abstractmethod
    def check_log_gradient(self, h: ScalarField, spec: Optional[ProblemSpec] = None) -> CheckResult:
        """Gradient diagnostics."""

    @abstractmethod
    def check_homotopy_f_condition(self, f: ScalarField, spec: ProblemSpec) -> CheckResult:
        """Convexity hypothesis along the homotopy f_t."""

    @abstractmethod
    def check_start_kernel(self, spec: ProblemSpec) -> CheckResult:
        """Trivial kernel of the linearisation at the start of the even path."""

    @abstractmethod
    def check_admissible(self, h: ScalarField, spec: ProblemSpec) -> CheckResult:
        """h > 0 and lambda(W) in the Garding cone."""

    @abstractmethod
    def check_evenness(self, h: ScalarField) -> CheckResult:
        """Exact capillary evenness."""

    @abstractmethod
    def check_neumann_transform(self, h: ScalarField) -> CheckResult:
        """Boundary normal derivative of h / l."""

    @abstractmethod
    def check_rigidity(self, h: ScalarField) -> CheckResult:
        """Delta h + n h = n with h - l horizontal-linear."""
