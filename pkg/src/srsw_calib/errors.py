"""Exception types shared across the package."""


class SrswError(Exception):
    """Base class for all package errors."""


class FieldError(SrswError):
    """Invalid field data: bad shape, bad kind, or non-finite values."""


class InterpolationError(SrswError):
    """Requested staggering pair is not supported."""


class ConfigError(SrswError):
    """Configuration file or override is invalid.

    Carries the full list of violations so a user can fix everything in
    one round trip.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


class NumericalError(SrswError):
    """Base class for failures of the numerical pipeline (exit code 2)."""


class BlowUpError(NumericalError):
    """A tendency or step produced non-finite values."""

    def __init__(self, message, index=None, step=None):
        self.index = index
        self.step = step
        super().__init__(message)


class DepthError(NumericalError):
    """Layer depth became non-positive; the run aborts rather than clamps."""


class SolverError(NumericalError):
    """Sparse transport solve failed or left a residual above tolerance."""


class CalibrationError(NumericalError):
    """Calibration could not proceed (degenerate data, unreachable threshold)."""

    def __init__(self, message, profile=None):
        self.profile = profile
        super().__init__(message)


class EnsembleError(NumericalError):
    """An ensemble member failed; carries member and step context."""

    def __init__(self, message, member_id=None, step=None):
        self.member_id = member_id
        self.step = step
        super().__init__(message)
