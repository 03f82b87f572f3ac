"""Pydantic models for problem definitions, run configuration and solve reports."""

import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.special import comb

from src.core.constants import (
    AMBIENT_DIMENSION,
    BUILTIN_DENSITIES,
    CONFIG_SCHEMA_VERSION,
    DEFAULT_NPHI,
    DEFAULT_NS,
    NEWTON_TOL,
)
from src.core.exceptions import BoundViolationError
from src.models.fields import ScalarField


class EquationForm(str, Enum):
    """Which residual Newton drives to zero."""

    QUOTIENT = "quotient"
    F_FORM = "F-form"


class RunMode(str, Enum):
    SOLVE = "solve"
    EIGENVALUE = "eigenvalue"
    CHRISTOFFEL_MINKOWSKI = "christoffel-minkowski"
    VALIDATE_ONLY = "validate-only"
    REPRODUCE = "reproduce"


class ProblemSpec(BaseModel):
    """One instance of sigma_k(W)/sigma_l(W) = f h^(p-1) with the Robin condition."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    n: int = Field(AMBIENT_DIMENSION, description="Dimension of the cap.")
    k: int
    l: int
    p: float = Field(..., ge=1.0, description="L_p exponent.")
    theta: float = Field(..., gt=0.0, lt=math.pi / 2, description="Contact angle.")
    f: ScalarField = Field(..., description="Prescribed positive density.")
    form: EquationForm = EquationForm.F_FORM
    even: bool = False
    experimental_angle: bool = False

    @field_validator("f")
    @classmethod
    def _density_positive(cls, f: ScalarField) -> ScalarField:
        if not np.all(f.values > 0):
            raise ValueError(f"density must be positive (min f = {f.min():.6g})")
        return f

    @model_validator(mode="after")
    def _check_indices_and_angle(self) -> "ProblemSpec":
        if self.n != AMBIENT_DIMENSION:
            raise ValueError(f"the PDE path is {AMBIENT_DIMENSION}-dimensional, got n={self.n}")
        if not 0 <= self.l < self.k <= self.n:
            raise ValueError(f"need 0 <= l < k <= n, got k={self.k}, l={self.l}")
        if abs(self.f.grid.theta - self.theta) > 1e-15:
            raise ValueError("density grid angle differs from theta")
        if 1.0 < self.p < self.k - self.l + 1 and not self.experimental_angle:
            threshold = math.acos((self.p - 1.0) / (self.k - self.l))
            if self.theta <= threshold:
                raise ValueError(
                    f"theta={self.theta:.6g} outside the proved range "
                    f"(arccos((p-1)/(k-l)) = {threshold:.6g}, pi/2); "
                    "set experimental_angle to run anyway"
                )
        return self

    @property
    def grid(self):
        return self.f.grid

    @property
    def q(self) -> float:
        """Homotopy exponent p + k - l - 1."""
        return self.p + self.k - self.l - 1.0

    @property
    def a(self) -> float:
        """Exponent of h on the right-hand side of the F-form."""
        return (self.p - 1.0) / (self.k - self.l)

    @property
    def binomial_ratio(self) -> float:
        """C(n,k) / C(n,l): the quotient evaluated at the identity."""
        return float(comb(self.n, self.k, exact=True) / comb(self.n, self.l, exact=True))

    @property
    def is_eigenvalue_problem(self) -> bool:
        return abs(self.p - (self.k - self.l + 1)) < 1e-12

    @property
    def needs_even_path(self) -> bool:
        return 1.0 <= self.p < self.k - self.l + 1 - 1e-12

    @property
    def is_experimental(self) -> bool:
        if not 1.0 < self.p < self.k - self.l + 1:
            return False
        return self.theta <= math.acos((self.p - 1.0) / (self.k - self.l))

    def with_density(self, f: ScalarField) -> "ProblemSpec":
        return self.model_copy(update={"f": f})

    def with_exponent(self, p: float) -> "ProblemSpec":
        # Rebuilt through the constructor so the angle restriction is re-checked.
        data = {name: getattr(self, name) for name in type(self).model_fields}
        data["p"] = p
        return ProblemSpec(**data)


class StepRecord(BaseModel):
    """One continuation step (accepted or rejected)."""

    t: float
    dt: float
    iterations: int
    residual: float
    cone_margin: float
    accepted: bool


class CheckResult(BaseModel):
    """Outcome of one verification; diagnostics have asserted=False."""

    name: str
    passed: bool
    asserted: bool = True
    value: Optional[float] = None
    node: Optional[int] = None
    detail: Dict[str, Any] = Field(default_factory=dict)

    def raise_for_status(self) -> None:
        if self.asserted and not self.passed:
            raise BoundViolationError(self.name, str(self.detail), node=self.node)


class EpsilonRun(BaseModel):
    """One member of the epsilon ladder used for the eigenvalue problem."""

    eps: float
    tau: float
    min_h: float
    max_h_normalized: float
    steps: int


class SolveReport(BaseModel):
    """Convergence trace, certificates and check results of one solve."""

    converged: bool = False
    iterations: List[int] = Field(default_factory=list)
    steps: List[StepRecord] = Field(default_factory=list)
    residual_history: List[float] = Field(default_factory=list)
    final_residual: float = float("inf")
    min_cone_margin: Optional[float] = None
    min_eigenvalue: Optional[float] = None
    regularization_shifts: List[float] = Field(default_factory=list)
    failure: Optional[str] = None
    sigma_min_estimate: Optional[float] = None
    checkpoint: Optional[str] = None
    interrupted: bool = False
    experimental: bool = False
    tau: Optional[float] = None
    tau_extrapolated: Optional[float] = None
    tau_bracket: Optional[List[float]] = None
    richardson_table: List[List[float]] = Field(default_factory=list)
    epsilon_runs: List[EpsilonRun] = Field(default_factory=list)
    c0_check: Optional[CheckResult] = None
    checks: List[CheckResult] = Field(default_factory=list)
    measures: Dict[str, Any] = Field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def total_iterations(self) -> int:
        return int(sum(self.iterations))

    @property
    def checks_passed(self) -> bool:
        return all(c.passed for c in self.checks if c.asserted)


class DensitySource(BaseModel):
    """Where the density f comes from: builtin name, CSV file or expression."""

    builtin: Optional[str] = None
    csv_path: Optional[Path] = None
    expression: Optional[str] = None

    @model_validator(mode="after")
    def _exactly_one(self) -> "DensitySource":
        given = [x for x in (self.builtin, self.csv_path, self.expression) if x is not None]
        if len(given) != 1:
            raise ValueError("exactly one of builtin, csv_path, expression is required")
        return self

    @classmethod
    def parse(cls, text: str) -> "DensitySource":
        """Interpret a --f value: builtin name, existing .csv path, or an expression."""
        if text in BUILTIN_DENSITIES:
            return cls(builtin=text)
        if text.lower().endswith(".csv"):
            return cls(csv_path=Path(text))
        return cls(expression=text)


class RunConfig(BaseModel):
    """Full configuration of one CLI run. Flags override file values."""

    schema_version: int = Field(CONFIG_SCHEMA_VERSION, alias="schema")
    mode: RunMode = RunMode.SOLVE
    n: int = AMBIENT_DIMENSION
    k: int = 2
    l: int = 0
    p: Optional[float] = None
    theta: float = math.pi / 3
    ns: int = DEFAULT_NS
    nphi: int = DEFAULT_NPHI
    f: DensitySource = Field(default_factory=lambda: DensitySource(builtin="rigidity"))
    form: EquationForm = EquationForm.F_FORM
    out: Path = Path("out")
    newton_tol: float = NEWTON_TOL
    even: bool = False
    experimental_angle: bool = False
    resume: Optional[Path] = None
    seed: int = 0
    uniqueness: bool = False

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    @field_validator("schema_version")
    @classmethod
    def _known_schema(cls, v: int) -> int:
        if v != CONFIG_SCHEMA_VERSION:
            raise ValueError(f"unsupported config schema {v} (expected {CONFIG_SCHEMA_VERSION})")
        return v

    @field_validator("nphi")
    @classmethod
    def _even_nphi(cls, v: int) -> int:
        if v % 2:
            raise ValueError("nphi must be even")
        return v

    @model_validator(mode="after")
    def _mode_consistency(self) -> "RunConfig":
        if self.mode == RunMode.CHRISTOFFEL_MINKOWSKI:
            if not 1 <= self.k <= self.n - 1:
                raise ValueError("christoffel-minkowski mode needs 1 <= k <= n-1")
            self.l = 0
        elif not 0 <= self.l < self.k <= self.n:
            raise ValueError(f"need 0 <= l < k <= n, got k={self.k}, l={self.l}")
        if self.mode == RunMode.EIGENVALUE:
            self.p = float(self.k - self.l + 1)
        elif self.p is None:
            self.p = float(self.k - self.l + 2)
        return self

    @property
    def equation_k(self) -> int:
        """Index of sigma actually solved for (CM mode solves sigma_{n-k})."""
        if self.mode == RunMode.CHRISTOFFEL_MINKOWSKI:
            return self.n - self.k
        return self.k
