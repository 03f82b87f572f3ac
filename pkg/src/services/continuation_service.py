"""
Newton continuation for the capillary Hessian quotient problem.

The solver starts from the cap itself (h = l solves the problem with the
density f_0 = C(n,k)/C(n,l) l^(1-p)), deforms the density along f_t towards
the prescribed f, and follows the solution with damped Newton steps that
never leave the Garding cone. The dilation-invariant case p = k - l + 1 is
reached through a ladder of nearby exponents and Richardson extrapolation,
followed by a bordered Newton polish of the pair (tau, h).
"""

import logging
import math
import time
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sparse
from scipy.sparse.linalg import splu
from scipy.special import comb

from src.core.constants import (
    CHECKPOINT_CSV,
    CHECKPOINT_JSON,
    DT_GROWTH,
    DT_MAX,
    DT_MIN,
    EIGEN_NEWTON_TOL,
    EIGEN_RESIDUAL_TOL,
    EPSILON_LADDER,
    EVENNESS_TOL,
    FAST_NEWTON_ITERATIONS,
    MAX_NEWTON,
    MIN_STEP_LENGTH,
    NEAR_SINGULAR_PIVOT_RATIO,
    NEWTON_TOL,
    TIKHONOV_SHIFT,
)
from src.core.exceptions import (
    BoundViolationError,
    ConeViolationError,
    ContinuationStuckError,
    DomainError,
    PositivityError,
    SingularJacobianError,
)
from src.models.fields import ScalarField
from src.models.models import EpsilonRun, EquationForm, ProblemSpec, SolveReport, StepRecord
from src.services import cap_domain, hessian_operator
from src.utils import field_io

logger = logging.getLogger(__name__)


def tau_bracket(spec: ProblemSpec) -> Tuple[float, float]:
    """
    Maximum-principle bracket for tau in sigma_k/sigma_l(W) = tau f h^(k-l):
    [C / (max f sin^(2(k-l)) theta), C / (min f (1 - cos theta)^(k-l))]
    with C = C(n,k)/C(n,l).
    """
    r = spec.k - spec.l
    ratio = spec.binomial_ratio
    theta = spec.theta
    lower = ratio / (spec.f.max() * math.sin(theta) ** (2 * r))
    upper = ratio / (spec.f.min() * (1.0 - math.cos(theta)) ** r)
    return lower, upper


def richardson_table(values: List[float]) -> List[List[float]]:
    """Extrapolation of values computed at eps, eps/2, eps/4, ... to eps = 0."""
    table: List[List[float]] = []
    for i, value in enumerate(values):
        row = [value]
        for j in range(1, i + 1):
            factor = 2.0**j
            row.append((factor * row[j - 1] - table[i - 1][j - 1]) / (factor - 1.0))
        table.append(row)
    return table


class ContinuationSolver:
    """
    Damped Newton inside the Garding cone, homotopy continuation in the
    density, and the epsilon ladder for the eigenvalue problem.
    """

    def __init__(
        self,
        newton_tol: float = NEWTON_TOL,
        max_newton: int = MAX_NEWTON,
        checkpoint_dir: Optional[Path] = None,
    ):
        self.newton_tol = newton_tol
        self.max_newton = max_newton
        self.checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir else None
        self.logger = logger

    # ------------------------------------------------------------------
    # Homotopy
    # ------------------------------------------------------------------
    def homotopy_density(self, f: ScalarField, t: float, spec: ProblemSpec) -> ScalarField:
        """f_t = [(1-t) (l^(p-1)/C)^(1/q) + t f^(-1/q)]^(-q), q = p + k - l - 1."""
        if not 0.0 <= t <= 1.0:
            raise DomainError(f"homotopy parameter must lie in [0, 1], got {t}")
        if not np.all(f.values > 0.0):
            raise DomainError("homotopy needs a positive density")
        q = spec.q
        if q <= 0.0:
            raise DomainError(f"homotopy exponent p + k - l - 1 must be positive, got {q}")
        if t == 1.0:
            return f
        ell = cap_domain.ell_field(f.grid).values
        if t == 0.0:
            return f.with_values(spec.binomial_ratio * ell ** (1.0 - spec.p))
        start = (ell ** (spec.p - 1.0) / spec.binomial_ratio) ** (1.0 / q)
        return f.with_values(((1.0 - t) * start + t * f.values ** (-1.0 / q)) ** (-q))

    # ------------------------------------------------------------------
    # Linear algebra
    # ------------------------------------------------------------------
    def _factorize(self, J: sparse.csr_matrix, report: SolveReport):
        pivot_estimate = 0.0
        try:
            lu = splu(J.tocsc())
            pivots = np.abs(lu.U.diagonal())
            pivot_estimate = float(pivots.min())
            if pivots.min() >= NEAR_SINGULAR_PIVOT_RATIO * pivots.max():
                return lu
            self.logger.warning(
                "Near-singular Jacobian (pivot ratio %.3e); adding shift %.1e * I",
                pivots.min() / pivots.max(), TIKHONOV_SHIFT,
            )
        except RuntimeError as exc:
            self.logger.warning("Singular Jacobian (%s); adding shift %.1e * I", exc, TIKHONOV_SHIFT)
        report.regularization_shifts.append(TIKHONOV_SHIFT)
        shifted = J + TIKHONOV_SHIFT * sparse.identity(J.shape[0], format="csr")
        try:
            return splu(shifted.tocsc())
        except RuntimeError as exc:
            raise SingularJacobianError(pivot_estimate, f"Jacobian factorization failed: {exc}") from exc

    def _trial(self, h: ScalarField, values: np.ndarray, spec: ProblemSpec, density: ScalarField):
        """Residual norm of a trial iterate, or None if it is not admissible."""
        trial = h.with_values(values)
        try:
            return trial, hessian_operator.residual(trial, spec, density).norm
        except (PositivityError, ConeViolationError):
            return trial, None

    # ------------------------------------------------------------------
    # Newton
    # ------------------------------------------------------------------
    def newton_solve(
        self,
        h0: ScalarField,
        density: ScalarField,
        spec: ProblemSpec,
        even: Optional[bool] = None,
    ) -> Tuple[ScalarField, SolveReport]:
        """
        Damped Newton from an admissible h0. Non-convergence is reported,
        never raised.
        """
        started = time.perf_counter()
        even = spec.even if even is None else even
        grid = h0.grid
        P = grid.stencils.evenness
        h = cap_domain.evenness_project(h0) if even else h0
        hessian_operator.check_admissible(h, spec.k)
        report = SolveReport(experimental=spec.is_experimental)

        norm = hessian_operator.residual(h, spec, density).norm
        report.residual_history.append(norm)
        iterations = 0
        while norm > self.newton_tol:
            if iterations >= self.max_newton:
                report.failure = f"iteration cap {self.max_newton} reached (residual {norm:.3e})"
                break
            res = hessian_operator.residual(h, spec, density)
            J = hessian_operator.linearize(h, spec, density)
            if even:
                J = (J @ P + (sparse.identity(grid.size, format="csr") - P)).tocsr()
            try:
                delta = self._factorize(J, report).solve(-res.stacked)
            except SingularJacobianError as exc:
                self.logger.error("Newton aborted: %s", exc)
                report.failure = str(exc)
                report.sigma_min_estimate = exc.sigma_min_estimate
                break

            alpha = 1.0
            accepted = False
            while alpha >= MIN_STEP_LENGTH:
                values = h.values + alpha * delta
                if even:
                    values = P @ values
                trial, trial_norm = self._trial(h, values, spec, density)
                if trial_norm is not None and trial_norm < norm:
                    accepted = True
                    break
                alpha *= 0.5
            iterations += 1
            if not accepted:
                report.failure = f"line search failed at iteration {iterations} (residual {norm:.3e})"
                self.logger.debug("Line search exhausted; residual stays %.3e", norm)
                break
            self.logger.debug(
                "Newton it=%d alpha=%.4g residual %.3e -> %.3e", iterations, alpha, norm, trial_norm
            )
            h, norm = trial, trial_norm
            report.residual_history.append(norm)

        report.converged = norm <= self.newton_tol
        if report.converged:
            report.failure = None
        report.iterations = [iterations]
        report.final_residual = norm
        W = hessian_operator.curvature_tensor(h)
        report.min_cone_margin = float(W.cone_margin(spec.k).min())
        report.min_eigenvalue = W.min_eigenvalue
        report.wall_time = time.perf_counter() - started
        return h, report

    # ------------------------------------------------------------------
    # Continuation
    # ------------------------------------------------------------------
    def _check_even_path(self, spec: ProblemSpec) -> None:
        if not spec.needs_even_path:
            return
        if not spec.even:
            raise DomainError(
                f"p={spec.p} < k-l+1={spec.k - spec.l + 1} requires the capillary-even path"
            )
        defect = cap_domain.evenness_defect(spec.f)
        if defect > EVENNESS_TOL:
            raise DomainError(f"density is not capillary even (defect {defect:.3e})")

    def _write_checkpoint(self, t: float, dt: float, h: ScalarField) -> Optional[str]:
        if self.checkpoint_dir is None:
            self.logger.warning("No checkpoint directory configured; state at t=%.6g not saved", t)
            return None
        path = field_io.write_checkpoint(self.checkpoint_dir, t, dt, h, CHECKPOINT_JSON, CHECKPOINT_CSV)
        return str(path)

    def continuation_solve(
        self,
        spec: ProblemSpec,
        start: Optional[ScalarField] = None,
        resume_from: Optional[Path] = None,
        max_steps: Optional[int] = None,
    ) -> Tuple[ScalarField, SolveReport]:
        """
        Follow f_t from t = 0 (h = l) to t = 1. `max_steps` stops after that
        many accepted steps and writes a checkpoint that `resume_from` reads.
        """
        started = time.perf_counter()
        self._check_even_path(spec)
        grid = spec.grid
        even = spec.even
        report = SolveReport(experimental=spec.is_experimental)
        if spec.is_experimental:
            self.logger.warning(
                "theta=%.6g is outside the proved angle range for p=%.6g; running experimentally",
                spec.theta, spec.p,
            )

        f = spec.f
        f0 = self.homotopy_density(f, 0.0, spec)
        constant_path = bool(np.max(np.abs(f.values - f0.values)) <= 1e-14 * f.max())

        if resume_from is not None:
            t, dt, h = field_io.read_checkpoint(Path(resume_from), grid)
            self.logger.info("Resuming continuation at t=%.6g (dt=%.4g)", t, dt)
            hessian_operator.check_admissible(h, spec.k)
        else:
            t, dt = 0.0, (1.0 if constant_path else DT_MAX)
            h = start if start is not None else cap_domain.ell_field(grid)
            h, first = self.newton_solve(h, f0, spec, even)
            report.regularization_shifts.extend(first.regularization_shifts)
            if not first.converged:
                report.failure = f"start state does not solve the t=0 problem: {first.failure}"
                report.final_residual = first.final_residual
                report.wall_time = time.perf_counter() - started
                return h, report

        accepted_steps = 0
        try:
            while t < 1.0:
                if max_steps is not None and accepted_steps >= max_steps:
                    report.interrupted = True
                    report.checkpoint = self._write_checkpoint(t, dt, h)
                    report.failure = f"interrupted at t={t:.6g}"
                    break
                t_new = min(1.0, t + dt)
                h_new, step = self.newton_solve(h, self.homotopy_density(f, t_new, spec), spec, even)
                report.regularization_shifts.extend(step.regularization_shifts)
                record = StepRecord(
                    t=t_new, dt=dt, iterations=step.total_iterations,
                    residual=step.final_residual,
                    cone_margin=step.min_cone_margin if step.min_cone_margin is not None else float("nan"),
                    accepted=step.converged,
                )
                report.steps.append(record)
                if step.converged:
                    self.logger.info(
                        "t=%.4f accepted (dt=%.4g, %d Newton iterations, residual %.2e)",
                        t_new, dt, step.total_iterations, step.final_residual,
                    )
                    t, h = t_new, h_new
                    accepted_steps += 1
                    report.iterations.append(step.total_iterations)
                    if step.total_iterations <= FAST_NEWTON_ITERATIONS and not constant_path:
                        dt = min(DT_MAX, dt * DT_GROWTH)
                    continue
                self.logger.info("t=%.4f rejected (%s); halving dt=%.4g", t_new, step.failure, dt)
                dt = min(dt, DT_MAX) * 0.5
                if dt < DT_MIN:
                    raise ContinuationStuckError(t, self._write_checkpoint(t, dt * 2.0, h))
        except ContinuationStuckError as exc:
            self.logger.error("%s", exc)
            report.failure = str(exc)
            report.checkpoint = exc.checkpoint

        final = hessian_operator.residual(h, spec, f)
        W = hessian_operator.curvature_tensor(h)
        report.final_residual = final.norm
        report.converged = t >= 1.0 and final.norm <= self.newton_tol
        if report.converged:
            report.failure = None
        report.min_cone_margin = float(W.cone_margin(spec.k).min())
        report.min_eigenvalue = W.min_eigenvalue
        report.wall_time = time.perf_counter() - started
        return h, report

    # ------------------------------------------------------------------
    # Eigenvalue problem p = k - l + 1
    # ------------------------------------------------------------------
    def _initial_tau(self, spec: ProblemSpec) -> float:
        ell = cap_domain.ell_field(spec.grid)
        r = spec.k - spec.l
        model = cap_domain.integrate(spec.binomial_ratio * ell.values ** (-r), spec.grid)
        guess = model / cap_domain.integrate(spec.f)
        lower, upper = tau_bracket(spec)
        return float(np.clip(guess, lower, upper))

    def _bordered_polish(
        self, spec: ProblemSpec, h: ScalarField, tau: float, report: SolveReport
    ) -> Tuple[ScalarField, float, bool]:
        """Newton on (h, tau) with the normalisation h(node) = 1."""
        grid = h.grid
        node = h.argmin()
        r = spec.k - spec.l
        f = spec.f.values
        form = EquationForm.F_FORM
        interior = (~grid.boundary_mask).astype(float)
        unit_row = sparse.csr_matrix(([1.0], ([0], [node])), shape=(1, grid.size))

        def full_residual(h_vals: np.ndarray, tau_val: float) -> Optional[np.ndarray]:
            try:
                res = hessian_operator.residual(
                    h.with_values(h_vals), spec, spec.f.with_values(tau_val * f), form=form
                )
            except (PositivityError, ConeViolationError):
                return None
            return np.append(res.stacked, h_vals[node] - 1.0)

        values = h.values.copy()
        current = full_residual(values, tau)
        norm = float(np.max(np.abs(current)))
        for iteration in range(self.max_newton):
            if norm <= EIGEN_NEWTON_TOL:
                break
            density = spec.f.with_values(tau * f)
            J = hessian_operator.linearize(h.with_values(values), spec, density, form=form)
            d_tau = -(1.0 / r) * tau ** (1.0 / r - 1.0) * f ** (1.0 / r) * values * interior
            bordered = sparse.bmat([[J, sparse.csr_matrix(d_tau[:, None])], [unit_row, None]], format="csr")
            try:
                step = self._factorize(bordered, report).solve(-current)
            except SingularJacobianError as exc:
                self.logger.error("Eigenvalue polish aborted: %s", exc)
                return h.with_values(values), tau, False
            alpha = 1.0
            while alpha >= MIN_STEP_LENGTH:
                trial_vals = values + alpha * step[:-1]
                trial_tau = tau + alpha * step[-1]
                if trial_tau > 0.0:
                    trial = full_residual(trial_vals, trial_tau)
                    if trial is not None and np.max(np.abs(trial)) < norm:
                        break
                alpha *= 0.5
            else:
                self.logger.warning("Eigenvalue polish line search failed at residual %.3e", norm)
                return h.with_values(values), tau, norm <= EIGEN_RESIDUAL_TOL
            values, tau, current = trial_vals, trial_tau, trial
            norm = float(np.max(np.abs(current)))
            self.logger.debug("Polish it=%d tau=%.12g residual %.3e", iteration + 1, tau, norm)
        return h.with_values(values), tau, norm <= EIGEN_RESIDUAL_TOL

    def eigenvalue_solve(self, spec: ProblemSpec) -> Tuple[Optional[float], ScalarField, SolveReport]:
        """
        Solve sigma_k/sigma_l(W) = tau f h^(k-l) for (tau, h) with min h = 1.

        Each rung of the epsilon ladder solves the problem with exponent
        k - l + 1 + eps and density rho f, rho being the previous tau
        estimate, so that its solution g stays of order one; then
        tau_eps = rho (min g)^eps.
        """
        if not spec.is_eigenvalue_problem:
            raise DomainError(f"eigenvalue mode needs p = k - l + 1, got p={spec.p}")
        started = time.perf_counter()
        report = SolveReport()
        lower, upper = tau_bracket(spec)
        report.tau_bracket = [lower, upper]
        rho = self._initial_tau(spec)
        self.logger.info("tau bracket [%.6g, %.6g]; initial estimate %.6g", lower, upper, rho)

        taus: List[float] = []
        h_tilde = cap_domain.ell_field(spec.grid)
        for eps in EPSILON_LADDER:
            scaled = spec.with_exponent(spec.p + eps).with_density(spec.f.with_values(rho * spec.f.values))
            g, sub = self.continuation_solve(scaled)
            report.iterations.extend(sub.iterations)
            report.steps.extend(sub.steps)
            report.regularization_shifts.extend(sub.regularization_shifts)
            if not sub.converged:
                report.failure = f"eps={eps}: {sub.failure}"
                report.wall_time = time.perf_counter() - started
                return None, g, report
            m = g.min()
            tau_eps = rho * m**eps
            h_tilde = g.with_values(g.values / m)
            report.epsilon_runs.append(
                EpsilonRun(
                    eps=eps, tau=tau_eps, min_h=m, max_h_normalized=h_tilde.max(),
                    steps=len(sub.iterations),
                )
            )
            self.logger.info("eps=%.4g: tau_eps=%.12g (min g=%.6g)", eps, tau_eps, m)
            taus.append(tau_eps)
            rho = tau_eps

        table = richardson_table(taus)
        report.richardson_table = table
        diffs = np.diff(taus)
        if np.all(diffs >= 0.0) or np.all(diffs <= 0.0):
            tau = table[-1][-1]
        else:
            self.logger.warning("tau_eps is not monotone in eps; using tau from the smallest eps")
            tau = taus[-1]
        report.tau_extrapolated = tau

        h_tilde, tau, ok = self._bordered_polish(spec, h_tilde, tau, report)
        h_tilde = h_tilde.with_values(h_tilde.values / h_tilde.min())
        report.tau = tau

        quotient = hessian_operator.residual(
            h_tilde, spec, spec.f.with_values(tau * spec.f.values), form=EquationForm.QUOTIENT
        )
        report.final_residual = quotient.norm
        report.converged = ok and quotient.norm <= EIGEN_RESIDUAL_TOL
        if not report.converged:
            report.failure = f"eigenvalue residual {quotient.norm:.3e} above {EIGEN_RESIDUAL_TOL:.0e}"
        W = hessian_operator.curvature_tensor(h_tilde)
        report.min_cone_margin = float(W.cone_margin(spec.k).min())
        report.min_eigenvalue = W.min_eigenvalue
        report.wall_time = time.perf_counter() - started
        if not lower <= tau <= upper:
            raise BoundViolationError(
                "tau_bracket", f"tau={tau:.12g} outside [{lower:.12g}, {upper:.12g}]"
            )
        return tau, h_tilde, report

    # ------------------------------------------------------------------
    # Christoffel-Minkowski form
    # ------------------------------------------------------------------
    @staticmethod
    def christoffel_minkowski_spec(
        area_index: int, p: float, f: ScalarField, **options
    ) -> ProblemSpec:
        """
        H_{n-k}(W) = f h^(p-1) as the quotient problem with indices
        (n - k, 0) and density C(n, n - k) f.
        """
        n = options.pop("n", 2)
        if not 1 <= area_index <= n - 1:
            raise DomainError(f"area measure index must satisfy 1 <= k <= n-1, got {area_index}")
        k = n - area_index
        scale = float(comb(n, k, exact=True))
        return ProblemSpec(
            n=n, k=k, l=0, p=p, theta=f.grid.theta, f=f.with_values(scale * f.values), **options
        )
