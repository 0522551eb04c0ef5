"""Exception types raised across the package."""


class GroundStateError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(GroundStateError, ValueError):
    """A potential or problem specification violates its invariants."""


class DomainError(GroundStateError, ValueError):
    """Evaluation requested outside the domain of a function."""


class FrameError(GroundStateError):
    """An s -> +-inf limit was requested in a frame where it does not exist."""


class SubcriticalError(GroundStateError):
    """The configuration has l_s <= 2*; the populated table is attached."""

    def __init__(self, message, table=None):
        super().__init__(message)
        self.table = table


class BracketError(GroundStateError):
    """A root could not be bracketed on the search interval."""


class StiffSegmentError(GroundStateError):
    """The adaptive integrator collapsed its step size."""

    def __init__(self, message, last_r=None):
        super().__init__(message)
        self.last_r = last_r


class InconclusiveError(GroundStateError):
    """A classification could not be decided from the available data."""


class OrbitError(GroundStateError):
    """An orbit left the region where it is meaningful (e.g. y1 <= 0)."""


class DivergentTailError(GroundStateError):
    """A tail integral -int_t^inf would diverge for the requested projection."""


class UnsupportedSpectrumError(GroundStateError):
    """Spectrum outside what the expansion engine handles (complex, large Jordan blocks)."""


class FitError(GroundStateError):
    """A least-squares fit is ill-conditioned or did not reach its residual floor."""


class ConfigError(GroundStateError):
    """An experiment configuration could not be parsed or validated."""
