"""Exception types shared across spinctl."""


class SpinctlError(Exception):
    """Base class for all spinctl errors."""


class InvalidParameterError(SpinctlError, ValueError):
    """A physical or numerical parameter is outside its admissible range."""


class DegenerateParametersError(SpinctlError, ValueError):
    """Parameters for which a geometric object does not exist (e.g. Gamma == gamma)."""


class UnreachableTargetError(SpinctlError):
    """The requested target state cannot be reached in finite time."""


class ArcTerminated(SpinctlError):
    """A singular arc has reached the point where its control diverges."""


class NoSteadyStateError(SpinctlError):
    """The cyclic steady-state equations have no unique solution."""


class ConfigError(SpinctlError, ValueError):
    """Malformed or inconsistent run configuration."""
