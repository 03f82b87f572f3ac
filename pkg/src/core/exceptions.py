"""
Exception hierarchy for the capillary curvature solver.

Every error raised by the library derives from CapillaryError and from the
closest built-in type, so callers can catch either.
"""

from typing import Optional


class CapillaryError(Exception):
    """Base class for all library errors."""


class DomainError(CapillaryError, ValueError):
    """Input outside the domain of an operation (k < 0, f <= 0, bad grid)."""


class ConfigError(CapillaryError, ValueError):
    """Run configuration that cannot be turned into a problem."""


class PositivityError(DomainError):
    """A support function is non-positive at some node."""

    def __init__(self, node: int, value: float):
        self.node = node
        self.value = value
        super().__init__(f"h is not positive at node {node} (h = {value:.6g})")


class ConeViolationError(CapillaryError, ValueError):
    """Eigenvalues left the Garding cone: the iterate is not admissible."""

    def __init__(self, k: int, node: Optional[int] = None, margin: float = float("nan")):
        self.k = k
        self.node = node
        self.margin = margin
        where = f" at node {node}" if node is not None else ""
        super().__init__(f"lambda not in Gamma_{k}{where} (cone margin {margin:.6g})")


class ConvexityError(CapillaryError, ValueError):
    """W is not positive definite where strict convexity is required."""

    def __init__(self, node: int, min_eigenvalue: float):
        self.node = node
        self.min_eigenvalue = min_eigenvalue
        super().__init__(
            f"W is not positive definite at node {node} "
            f"(min eigenvalue {min_eigenvalue:.6g})"
        )


class SingularJacobianError(CapillaryError, RuntimeError):
    """The Newton matrix could not be factorized."""

    def __init__(self, sigma_min_estimate: float, message: str = ""):
        self.sigma_min_estimate = sigma_min_estimate
        super().__init__(
            message or f"singular Jacobian (smallest pivot {sigma_min_estimate:.3e})"
        )


class ContinuationStuckError(CapillaryError, RuntimeError):
    """Continuation step size fell below the minimum."""

    def __init__(self, t: float, checkpoint: Optional[str]):
        self.t = t
        self.checkpoint = checkpoint
        super().__init__(f"continuation stuck at t = {t:.6g}; checkpoint: {checkpoint}")


class BoundViolationError(CapillaryError, AssertionError):
    """An asserted closed-form statement failed on a computed solution."""

    def __init__(self, check: str, detail: str, node: Optional[int] = None):
        self.check = check
        self.node = node
        super().__init__(f"{check} failed: {detail}")
