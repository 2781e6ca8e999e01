"""Exception hierarchy.

Two branches matter for the CLI exit codes: ``ValidationError`` (bad inputs,
files, or configuration; exit code 2) and ``NumericalError`` (a solver or
factorization gave up; exit code 3).
"""

from __future__ import annotations


class CardioromError(Exception):
    """Base class for all package errors."""


class ValidationError(CardioromError):
    """Invalid input value, file content, or configuration."""


class ParseError(ValidationError):
    """Malformed structured input (CSV/JSON)."""


class GridError(ValidationError):
    """Time grid of an ingested trace is incompatible with the configured one."""


class NumericalError(CardioromError):
    """A numerical procedure failed to produce a usable result."""


class DomainError(NumericalError):
    """Argument left the mathematical domain (e.g. log of a nonpositive value)."""


class NoBracket(NumericalError):
    """A scalar root could not be bracketed within the allowed range."""


class NonConvergence(NumericalError):
    """Iterative solve exhausted its budget before reaching tolerance."""


class SimulationFailed(NumericalError):
    """A cardiac-cycle simulation aborted; carries the failing step index."""

    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class NoSolution(NumericalError):
    """The requested inversion has no solution in the feasible region."""


class NotPositiveDefinite(NumericalError):
    """Cholesky factorization failed even after jitter escalation."""


class DegenerateData(NumericalError):
    """Input data rank is too low for the requested decomposition."""


class DegenerateHull(NumericalError):
    """Point cloud is too flat to support a full-dimensional convex hull."""


class ExhaustedSampling(NumericalError):
    """Rejection sampling acceptance rate fell below the configured floor."""


class StuckChain(NumericalError):
    """MCMC acceptance rate collapsed during adaptation."""


class ConstraintViolation(CardioromError):
    """A physiological constraint check failed (reported, sometimes non-fatal)."""
