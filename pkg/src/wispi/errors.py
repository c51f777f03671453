"""Exception and warning types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are inconsistent with the weighted space."""


class ConditioningError(RuntimeError):
    """A linear solve was refused or failed because the matrix is too ill-conditioned."""


class CoefficientError(ValueError):
    """An elliptic coefficient is non-positive at a quadrature node or grid point."""


class FactorError(RuntimeError):
    """A covariance factorization failed (matrix indefinite beyond tolerance)."""


class EnsembleSizeError(ValueError):
    """Ensemble too small for the requested statistic."""


class DegenerateError(ValueError):
    """Operator is (numerically) zero where a nonzero one is required."""


class TruncationError(RuntimeError):
    """Spectral reference retains too few modes for the requested comparison."""


class MaxIterationsError(RuntimeError):
    """Optimizer hit its iteration cap. Carries the best iterate found."""

    def __init__(self, message, best=None, best_value=None):
        super().__init__(message)
        self.best = best
        self.best_value = best_value


class DivergenceError(RuntimeError):
    """Time integration blew up (state norm above guard threshold)."""


class ConfigError(ValueError):
    """Experiment configuration failed validation."""


class FitError(ValueError):
    """Rate fit rejected its inputs (non-positive values or too few points)."""


class DisconnectedGraphWarning(UserWarning):
    """Neighborhood graph is disconnected at the chosen connectivity radius."""


class EmptyBallWarning(UserWarning):
    """An observation ball contains no point-cloud points."""
