"""Exception hierarchy shared by all modules."""


class PrimerGaitError(Exception):
    """Base class for every error raised by this package."""


class InvalidStateError(PrimerGaitError, ValueError):
    """A state or input vector has the wrong shape or non-finite entries."""


class SingularConfigurationError(PrimerGaitError):
    """The inertia matrix is singular at the requested configuration."""

    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class TransversalityError(PrimerGaitError):
    """The virtual constraint loses transversality (decoupling matrix singular)."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


class UnsupportedModeError(PrimerGaitError):
    """An operation was requested for a reference parameterization it does not support."""


class IntegrationError(PrimerGaitError):
    """Numerical integration produced a non-finite state."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class ConfigError(PrimerGaitError, ValueError):
    """Configuration text failed to parse or validate."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line
