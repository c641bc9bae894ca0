"""Exception types shared across the package."""


class InvalidParameter(ValueError):
    """A constructor argument is non-finite, out of range, or inconsistent."""


class NetProfitViolation(InvalidParameter):
    """Premium rate does not strictly exceed the expected claim outflow."""


class DomainError(ValueError):
    """An operation was called outside its mathematical domain."""


class NoConvergence(RuntimeError):
    """A quadrature, series, or root-finding loop hit its budget above tolerance.

    The optional ``axis`` attribute names the integration/series axis that
    failed, so callers several layers up can report where things went wrong.
    """

    def __init__(self, message: str, axis: str | None = None):
        super().__init__(message if axis is None else f"{message} [axis: {axis}]")
        self.axis = axis


class BadDecayHint(RuntimeError):
    """The integrand tail at the chosen cutoff exceeds the allowed mass."""


class NegativeDensity(RuntimeError):
    """A density came out more negative than roundoff can explain."""


class HorizonTooShort(ValueError):
    """Simulation horizon leaves a censoring bound above the requested level."""


class ConfigError(Exception):
    """A run configuration file or override could not be validated."""


class ComputeError(RuntimeError):
    """A compute subcommand failed; wraps the originating error with context."""
