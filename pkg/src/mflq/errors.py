"""Exception hierarchy shared by all solver modules."""


class MFLQError(Exception):
    """Base class for all library errors."""


class DimensionError(MFLQError):
    """A matrix-valued field has the wrong shape; the message names the field."""


class ValidationError(MFLQError):
    """Problem data violates the standing positivity/continuity hypotheses."""


class IllPosedError(MFLQError):
    """A required matrix inversion lost positive definiteness (margin below delta/2)."""


class BlowUpError(MFLQError):
    """Backward integration produced a non-finite value; carries the failure time."""

    def __init__(self, message: str, time: float | None = None):
        super().__init__(message)
        self.time = time


class ConvergenceError(MFLQError):
    """Refinement loop exhausted its doublings without meeting tolerance."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class ConfigurationError(MFLQError):
    """Run configuration is inconsistent (step counts, alignment, unknown keys)."""
