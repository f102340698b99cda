"""Exception types raised across the package."""

from __future__ import annotations


class HiddenRegimeError(Exception):
    """Base class for all package errors."""


# ---------------------------------------------------------------------------
# Model validation
# ---------------------------------------------------------------------------


class ModelViolation(HiddenRegimeError, ValueError):
    """A single broken model invariant."""


class NonConservativeGenerator(ModelViolation):
    """A generator matrix has negative off-diagonals or nonzero row sums."""


class NonPositiveHazard(ModelViolation):
    """A hazard rate is zero or negative."""


class GammaOutOfRange(ModelViolation):
    """Risk aversion outside the open interval (0, 1)."""


class BadInitialDistribution(ModelViolation):
    """Initial regime distribution is not a strictly positive probability vector."""


class InvalidParameter(ModelViolation):
    """Any other malformed scalar or shape."""


class ModelValidationError(HiddenRegimeError, ValueError):
    """Raised by ``validate_model`` with the complete list of violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = "; ".join(f"{type(v).__name__}: {v}" for v in self.violations)
        super().__init__(f"{len(self.violations)} model violation(s): {lines}")


# ---------------------------------------------------------------------------
# Numerical failures
# ---------------------------------------------------------------------------


class PolicyNonFinite(HiddenRegimeError, FloatingPointError):
    """A policy returned NaN or infinite positions."""


class NonFiniteIncrement(HiddenRegimeError, FloatingPointError):
    """A filter step received a non-finite observation increment."""


class GridMisalignment(HiddenRegimeError, ValueError):
    """Path arrays do not share the same time grid."""


class PicardDivergence(HiddenRegimeError, ArithmeticError):
    """Fixed-point iteration for a nonlinear source failed to converge."""


class NonFiniteSurface(HiddenRegimeError, FloatingPointError):
    """A PDE solve produced NaN or infinite values."""


class OutOfDomain(HiddenRegimeError, ValueError):
    """An interpolation query lies outside the grid hull."""
