"""
Acceptance suite behind `capsolve reproduce`.

Each criterion is a module-level function (so joblib can ship it to a
worker) taking the shared ReproduceSettings and returning a CheckResult.
"""

import logging
import math
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed
from rich.console import Console
from rich.table import Table

from src.cli.run_service import RunOutcome, RunService
from src.core.constants import (
    DEFAULT_NPHI,
    DEFAULT_NS,
    EXIT_CHECK_FAILED,
    EXIT_OK,
    FIRST_VARIATION_EPS,
    FIRST_VARIATION_TOL,
)
from src.core.density_factory import builtin_density, get_worker_count
from src.core.exceptions import CapillaryError
from src.models.models import CheckResult, DensitySource, ProblemSpec, RunConfig, RunMode
from src.services import cap_domain, geometry_service, hessian_operator
from src.services.continuation_service import ContinuationSolver
from src.services.validation_service import ValidationService
from src.utils import symfunc
from src.utils.random_fields import density_from_convex_gauge, random_convex_support, random_density

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReproduceSettings:
    ns: int = DEFAULT_NS
    nphi: int = DEFAULT_NPHI
    seed: int = 0
    # Fraction of the nominal sample counts; 1.0 runs the full suite.
    sample_fraction: float = 1.0
    out: Path = Path("out") / "reproduce"

    def count(self, nominal: int) -> int:
        return max(1, int(round(nominal * self.sample_fraction)))


def _grid(settings: ReproduceSettings, theta: float):
    return cap_domain.build_grid(theta, settings.ns, settings.nphi)


def _spec(grid, k, l, p, f=None, **options) -> ProblemSpec:
    f = f if f is not None else builtin_density("rigidity", grid, k, l, p)
    return ProblemSpec(k=k, l=l, p=p, theta=grid.theta, f=f, **options)


# (k, l, p, even) regimes solved for the sweeps over converged solutions;
# the even rows take the even path below the critical exponent.
SOLVED_CASES: Tuple[Tuple[int, int, float, bool], ...] = (
    (2, 0, 4.0, False),
    (2, 1, 3.0, False),
    (1, 0, 3.0, False),
    (2, 0, 1.0, True),
    (2, 1, 1.0, True),
)


def _case_name(k: int, l: int, p: float) -> str:
    return f"k{k}_l{l}_p{p:g}"


@lru_cache(maxsize=None)
def _solved_case(settings: ReproduceSettings, factor: int, k: int, l: int, p: float, even: bool) -> RunOutcome:
    """Full `solve` run of one SOLVED_CASES row on the settings grid refined by `factor`."""
    solver = ContinuationSolver()
    config = RunConfig(
        mode=RunMode.SOLVE, k=k, l=l, p=p, ns=settings.ns * factor, nphi=settings.nphi * factor,
        f=DensitySource(builtin="even-bump" if even else "bump"), even=even,
        out=settings.out / "solved" / f"{_case_name(k, l, p)}_x{factor}",
    )
    return RunService(solver, ValidationService(solver)).run(config)


def _converged(outcome: RunOutcome) -> bool:
    return outcome.solution is not None and outcome.report is not None and outcome.report.converged


# ----------------------------------------------------------------------
# Criteria
# ----------------------------------------------------------------------
def symmetric_function_suite(settings: ReproduceSettings) -> CheckResult:
    rng = np.random.default_rng(settings.seed)
    failures: Dict[str, int] = {"maclaurin": 0, "concavity": 0, "ordering": 0, "euler": 0, "trace": 0}
    samples = settings.count(10_000)
    for _ in range(samples):
        n = int(rng.integers(2, 6))
        positive = rng.uniform(0.05, 3.0, size=n)
        h_values = [symfunc.normalized_sigma_k(positive, m) for m in range(1, n + 1)]
        roots = [h ** (1.0 / m) for m, h in enumerate(h_values, start=1)]
        if np.any(np.diff(roots) > 1e-12 * max(roots)):
            failures["maclaurin"] += 1

        k = int(rng.integers(1, n + 1))
        l = int(rng.integers(0, k))
        lam, mu = positive.copy(), rng.uniform(0.05, 3.0, size=n)
        if k < n:
            lam[-1] = -rng.uniform(0.0, 0.5) * lam[:-1].min()
            if not symfunc.in_cone(lam, k):
                lam = positive
        f_lam, f_mu = symfunc.quotient_F(lam, k, l), symfunc.quotient_F(mu, k, l)
        mid = symfunc.quotient_F(0.5 * (lam + mu), k, l)
        if mid < 0.5 * (f_lam + f_mu) - 1e-12 * max(1.0, mid):
            failures["concavity"] += 1
        order = np.argsort(-lam)
        grad = symfunc.quotient_F_gradient(lam[order], k, l)
        if np.any(np.diff(grad) < -1e-12 * max(1.0, float(np.abs(grad).max()))):
            failures["ordering"] += 1
        euler = float(np.dot(lam[order], grad))
        if abs(euler - f_lam) > 1e-12 * max(1.0, f_lam):
            failures["euler"] += 1
        if grad.sum() < symfunc.trace_lower_bound(n, k, l) * (1.0 - 1e-12):
            failures["trace"] += 1
    total = sum(failures.values())
    return CheckResult(name="symmetric_functions", passed=total == 0, value=float(total),
                       detail={"samples": samples, **failures})


def rigidity_reproduction(settings: ReproduceSettings) -> CheckResult:
    solver = ContinuationSolver()
    worst = 0.0
    cases = []
    for p in (4.0, 3.01):
        for k, l in ((2, 0), (2, 1), (1, 0)):
            for theta in (math.pi / 6, math.pi / 3):
                grid = _grid(settings, theta)
                spec = _spec(grid, k, l, p)
                h, report = solver.continuation_solve(spec)
                err = float(np.max(np.abs(h.values - cap_domain.ell_field(grid).values)))
                ok = report.converged and err <= 1e-6
                worst = max(worst, err if report.converged else math.inf)
                cases.append({"p": p, "k": k, "l": l, "theta": theta, "error": err, "passed": ok})
    return CheckResult(name="rigidity", passed=all(c["passed"] for c in cases), value=worst,
                       detail={"cases": cases})


def constant_quotient_rigidity(settings: ReproduceSettings) -> CheckResult:
    solver = ContinuationSolver()
    validator = ValidationService(solver)
    values = []
    passed = True
    for k, l in ((2, 0), (2, 1), (1, 0)):
        grid = _grid(settings, math.pi / 3)
        spec = _spec(grid, k, l, 1.0, builtin_density("constant", grid, k, l, 1.0), even=True)
        h, report = solver.continuation_solve(spec)
        check = validator.check_rigidity(h)
        passed = passed and report.converged and check.passed
        values.append(check.value)
    return CheckResult(name="constant_quotient", passed=passed, value=max(values))


def c0_bracket_suite(settings: ReproduceSettings) -> CheckResult:
    rng = np.random.default_rng(settings.seed + 1)
    solver = ContinuationSolver()
    validator = ValidationService(solver)
    violations, solved = 0, 0
    for i in range(settings.count(20)):
        k, l = ((2, 0), (2, 1), (1, 0))[i % 3]
        p = k - l + 1 + rng.uniform(0.3, 2.0)
        grid = _grid(settings, rng.uniform(0.4, 1.3))
        spec = _spec(grid, k, l, p, random_density(grid, rng, k, l, p))
        h, report = solver.continuation_solve(spec)
        if not report.converged:
            continue
        solved += 1
        violations += not validator.check_c0_bounds(h, spec).passed
    return CheckResult(name="c0_bracket", passed=violations == 0 and solved > 0, value=float(violations),
                       detail={"solved": solved})


def eigenvalue_suite(settings: ReproduceSettings) -> CheckResult:
    solver = ContinuationSolver()
    grid = _grid(settings, 0.9)
    k, l, c = 2, 1, 2.0
    p = float(k - l + 1)
    base = builtin_density("rigidity", grid, k, l, p)
    try:
        tau, h, report = solver.eigenvalue_solve(_spec(grid, k, l, p, base.with_values(c * base.values)))
        tau2, _, _ = solver.eigenvalue_solve(_spec(grid, k, l, p, base.with_values(2.0 * c * base.values)))
    except CapillaryError as exc:
        return CheckResult(name="eigenvalue", passed=False, detail={"error": str(exc)})
    if tau is None or tau2 is None:
        return CheckResult(name="eigenvalue", passed=False, detail={"failure": report.failure})
    ell = cap_domain.ell_field(grid).values
    h_err = float(np.max(np.abs(h.values - ell / ell.min())))
    tau_err = abs(tau - 1.0 / c)
    scale_err = abs(tau2 / tau - 0.5) / 0.5
    passed = tau_err <= 1e-4 and h_err <= 1e-5 and scale_err <= 1e-8
    return CheckResult(name="eigenvalue", passed=passed, value=tau, detail={
        "tau_error": tau_err, "h_error": h_err, "scaling_error": scale_err,
        "bracket": report.tau_bracket, "richardson": report.richardson_table,
    })


def uniqueness_suite(settings: ReproduceSettings) -> CheckResult:
    rng = np.random.default_rng(settings.seed + 2)
    validator = ValidationService(ContinuationSolver())
    regimes = (
        {"k": 2, "l": 0, "p": 4.0, "theta": 1.0, "even": False},
        {"k": 2, "l": 0, "p": 2.0, "theta": 1.2, "even": True},
    )
    spreads, failures = [], 0
    for regime in regimes:
        grid = _grid(settings, regime["theta"])
        for _ in range(settings.count(10)):
            f = random_density(grid, rng, regime["k"], regime["l"], regime["p"], even=regime["even"])
            spec = _spec(grid, regime["k"], regime["l"], regime["p"], f, even=regime["even"])
            result = validator.check_uniqueness(spec)
            failures += not result.passed
            spreads.append(result.value)
    return CheckResult(name="uniqueness", passed=failures == 0, value=float(np.nanmax(spreads)),
                       detail={"failures": failures})


def minkowski_suite(settings: ReproduceSettings) -> CheckResult:
    """Minkowski defects of every converged solve, on the grid and on its refinement."""
    cases = {}
    for k, l, p, even in SOLVED_CASES:
        runs = [_solved_case(settings, factor, k, l, p, even) for factor in (1, 2)]
        if not all(_converged(run) for run in runs):
            cases[_case_name(k, l, p)] = {"converged": False}
            continue
        coarse, fine = (np.array([geometry_service.minkowski_defect(run.solution, r) for r in (0, 1)])
                        for run in runs)
        ratios = coarse / np.maximum(fine, 1e-300)
        ok = bool(coarse.max() <= 1e-3 and np.all((ratios >= 3.5) | (coarse <= 1e-12)))
        cases[_case_name(k, l, p)] = {"converged": True, "coarse": coarse.tolist(), "fine": fine.tolist(),
                                      "ratios": ratios.tolist(), "passed": ok}
    solved = [case for case in cases.values() if case["converged"]]
    worst = max((max(case["coarse"]) for case in solved), default=None)
    passed = bool(solved) and all(case["passed"] for case in solved)
    return CheckResult(name="minkowski", passed=passed, value=worst,
                       detail={"solved": len(solved), "cases": cases})


def mixed_quermassintegral_suite(settings: ReproduceSettings) -> CheckResult:
    """
    Centered differences at both FIRST_VARIATION_EPS steps against the exact
    derivative of the discrete V_k, and the extrapolated difference against
    the mixed p-quermassintegral up to the grid tolerance.
    """
    rng = np.random.default_rng(settings.seed + 4)
    grid = _grid(settings, math.pi / 3)
    n = geometry_service.DIMENSION
    worst_difference, worst_mixed = 0.0, 0.0
    for _ in range(settings.count(10)):
        h_k = random_convex_support(grid, rng)
        h_l = random_convex_support(grid, rng)
        for p in (1.0, 2.0, 3.0):
            for k in range(n + 1):
                exact = geometry_service.p_variation_exact(h_k, h_l, p, k)
                for eps in FIRST_VARIATION_EPS:
                    approx = geometry_service.p_variation(h_k, h_l, p, k, eps)
                    worst_difference = max(worst_difference, abs(approx - exact) / abs(exact))
                mixed = (n + 1 - k) / p * geometry_service.mixed_p_quermassintegral(h_k, h_l, p, k)
                extrapolated = geometry_service.p_variation_extrapolated(h_k, h_l, p, k)
                worst_mixed = max(worst_mixed, abs(extrapolated - mixed) / abs(mixed))
    passed = worst_difference <= FIRST_VARIATION_TOL and worst_mixed <= grid.grid_tolerance
    return CheckResult(name="mixed_p_quermassintegral", passed=passed, value=worst_difference,
                       detail={"mixed_gap": worst_mixed, "grid_tolerance": grid.grid_tolerance})


def alexandrov_fenchel_suite(settings: ReproduceSettings) -> CheckResult:
    rng = np.random.default_rng(settings.seed + 5)
    grid = _grid(settings, math.pi / 3)
    gaps = []
    for i in range(settings.count(50)):
        h1, h2 = random_convex_support(grid, rng), random_convex_support(grid, rng)
        gaps.append(geometry_service.alexandrov_fenchel_gap(h1, h2, 1 + i % 2))
    return CheckResult(name="alexandrov_fenchel", passed=min(gaps) >= -1e-10, value=min(gaps))


# (k, l, p, even, theta) regimes for the strict convexity sweep.
CONVEXITY_REGIMES: Tuple[Tuple[int, int, float, bool, float], ...] = (
    (2, 0, 4.0, False, math.pi / 3),
    (2, 1, 3.0, False, math.pi / 3),
    (2, 0, 1.0, True, math.pi / 3),
    (2, 1, 1.0, True, math.pi / 4),
)


def strict_convexity_suite(settings: ReproduceSettings) -> CheckResult:
    """Solutions for densities with convex f^(-1/q) stay strictly convex, in every regime."""
    rng = np.random.default_rng(settings.seed + 6)
    solver = ContinuationSolver()
    validator = ValidationService(solver)
    regimes = {}
    for k, l, p, even, theta in CONVEXITY_REGIMES:
        grid = _grid(settings, theta)
        spec = _spec(grid, k, l, p, even=even)
        minima = []
        for _ in range(settings.count(10)):
            g = random_convex_support(grid, rng, min_eigenvalue=0.2, even=even)
            f = density_from_convex_gauge(g, spec.q, scale=spec.binomial_ratio)
            case = spec.with_density(f)
            if not validator.check_f_condition(f, case).passed:
                continue
            h, report = solver.continuation_solve(case)
            if report.converged:
                minima.append(hessian_operator.curvature_tensor(h).min_eigenvalue)
        regimes[_case_name(k, l, p)] = {"tested": len(minima), "min_eigenvalue": min(minima, default=None)}
    passed = all(r["tested"] > 0 and r["min_eigenvalue"] > 0.0 for r in regimes.values())
    tested = [r["min_eigenvalue"] for r in regimes.values() if r["tested"]]
    return CheckResult(name="strict_convexity", passed=passed, value=min(tested, default=None),
                       detail={"regimes": regimes})


def evenness_suite(settings: ReproduceSettings) -> CheckResult:
    codes = {}
    for p, theta in ((1.0, math.pi / 3), (1.5, 1.4)):
        solver = ContinuationSolver()
        config = RunConfig(
            mode=RunMode.SOLVE, k=2, l=0, p=p, theta=theta, ns=settings.ns, nphi=settings.nphi,
            f=DensitySource(builtin="even-bump"), even=True,
            out=settings.out / f"evenness_p{p:g}",
        )
        outcome = RunService(solver, ValidationService(solver)).run(config)
        defect = cap_domain.evenness_defect(outcome.solution) if outcome.solution is not None else None
        codes[f"p={p:g}"] = {"exit": outcome.exit_code, "defect": defect}
    passed = all(v["exit"] == EXIT_OK and v["defect"] == 0.0 for v in codes.values())
    return CheckResult(name="evenness", passed=passed, detail=codes)


def linearization_suite(settings: ReproduceSettings) -> CheckResult:
    rng = np.random.default_rng(settings.seed + 7)
    grid = _grid(settings, math.pi / 3)
    epsilons = np.array([1e-3, 1e-4, 1e-5, 1e-6])
    orders: List[float] = []
    for i in range(settings.count(5)):
        k, l = ((2, 0), (2, 1), (1, 0))[i % 3]
        p = k - l + 2.0
        h = random_convex_support(grid, rng)
        spec = _spec(grid, k, l, p, random_density(grid, rng, k, l, p))
        direction = random_convex_support(grid, rng).values - cap_domain.ell_field(grid).values
        base = hessian_operator.residual(h, spec).stacked
        Jz = hessian_operator.linearize(h, spec) @ direction
        errors = np.array([
            np.max(np.abs(hessian_operator.residual(h.with_values(h.values + e * direction), spec).stacked
                          - base - e * Jz))
            for e in epsilons
        ])
        usable = errors[1:] > 1e-11
        orders.extend(np.log10(errors[:-1] / errors[1:])[usable].tolist())
    passed = bool(orders) and min(orders) >= 1.9
    return CheckResult(name="linearization", passed=passed, value=min(orders) if orders else None,
                       detail={"orders": orders})


def reconstruction_suite(settings: ReproduceSettings) -> CheckResult:
    """Boundary contact and the curvature problem on the reconstructed surface of every solved case."""
    wanted = ("boundary_contact", "curvature_problem_residual")
    cases = {}
    for k, l, p, even in SOLVED_CASES:
        outcome = _solved_case(settings, 1, k, l, p, even)
        if outcome.report is None:
            cases[_case_name(k, l, p)] = {"passed": False}
            continue
        checks = {c.name: c for c in outcome.report.checks if c.name in wanted}
        ok = _converged(outcome) and len(checks) == len(wanted) and all(c.passed for c in checks.values())
        cases[_case_name(k, l, p)] = {"passed": ok, **{name: c.value for name, c in checks.items()}}
    passed = all(case["passed"] for case in cases.values())
    return CheckResult(name="reconstruction", passed=passed,
                       detail={"solved": sum(case["passed"] for case in cases.values()), "cases": cases})


CRITERIA: List[Callable[[ReproduceSettings], CheckResult]] = [
    symmetric_function_suite,
    rigidity_reproduction,
    constant_quotient_rigidity,
    c0_bracket_suite,
    eigenvalue_suite,
    uniqueness_suite,
    minkowski_suite,
    mixed_quermassintegral_suite,
    alexandrov_fenchel_suite,
    strict_convexity_suite,
    evenness_suite,
    linearization_suite,
    reconstruction_suite,
]


def _guarded(criterion: Callable[[ReproduceSettings], CheckResult], settings: ReproduceSettings) -> CheckResult:
    try:
        return criterion(settings)
    except CapillaryError as exc:
        logger.error("Criterion %s raised: %s", criterion.__name__, exc)
        return CheckResult(name=criterion.__name__, passed=False, detail={"error": str(exc)})


def run_suite(settings: ReproduceSettings, names: Optional[List[str]] = None) -> List[CheckResult]:
    selected = [c for c in CRITERIA if not names or c.__name__ in names]
    workers = get_worker_count()
    logger.info("Running %d criteria on %d worker(s)", len(selected), workers)
    return Parallel(n_jobs=workers)(delayed(_guarded)(c, settings) for c in selected)


def render(results: List[CheckResult], console: Optional[Console] = None) -> int:
    table = Table(title="Acceptance suite")
    table.add_column("Criterion")
    table.add_column("Result")
    table.add_column("Value", justify="right")
    table.add_column("Detail", overflow="fold")
    for result in results:
        status = "[green]PASS[/green]" if result.passed else "[red]FAIL[/red]"
        value = "" if result.value is None else f"{result.value:.3e}"
        detail = ", ".join(f"{k}={v}" for k, v in result.detail.items() if not isinstance(v, (list, dict)))
        table.add_row(result.name, status, value, detail)
    (console or Console()).print(table)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


def quick_settings(settings: ReproduceSettings) -> ReproduceSettings:
    """Coarse grid and a tenth of the samples, for smoke runs."""
    return replace(settings, ns=24, nphi=48, sample_fraction=0.1)
