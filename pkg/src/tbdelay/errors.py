"""Exception hierarchy for the tbdelay package."""


class TbDelayError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(TbDelayError):
    """Model parameters outside their admissible domain."""


class NoEndemicEquilibrium(TbDelayError):
    """Raised when an endemic equilibrium is requested but R0 <= 1."""


class ConvergenceFailure(TbDelayError):
    """An iterative solver failed to reach its tolerance.

    The best iterate found is attached as ``last_iterate``.
    """

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


class GridError(TbDelayError):
    """Time grid is incompatible with the requested delays."""


class BlowupError(TbDelayError):
    """State became non-finite during integration; ``time`` holds the offending time."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class RangeError(TbDelayError):
    """Query time outside the domain of a trajectory."""


class JobError(TbDelayError):
    """Invalid job description passed to the CLI."""
