"""Exception types shared across the package."""


class StructuralError(ValueError):
    """Operands disagree on dimension, truncation order or scalar mode."""


class UnsupportedDegreeError(ValueError):
    """A result would have multivector degree outside 0..3."""


class PreconditionError(ValueError):
    """An input violates a documented precondition."""


class ConfigError(ValueError):
    """A configuration value is invalid."""


class InputError(ValueError):
    """Malformed external input (JSON files, matrices with wrong shapes)."""


class PerturbationTooLarge(PreconditionError):
    """The starting schedule parameter t0 is not above 1."""


class NotPoissonError(PreconditionError):
    """A bivector that should be Poisson has a nonzero Jacobi defect."""


class HarmonicObstruction(ValueError):
    """A slice carries a nonzero harmonic part, so the homotopy identity fails."""


class DivergenceError(RuntimeError):
    """The iteration error grew for too many consecutive steps."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class MonitorViolation(RuntimeError):
    """A hard monitor (monotone error decay) failed during a run."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history or []


class GenerationError(RuntimeError):
    """A random Poisson perturbation could not be produced."""
