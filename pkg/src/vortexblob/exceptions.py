class VortexBlobError(Exception):
    """Base class for library errors."""


class KernelDomainError(VortexBlobError, ValueError):
    """The singular kernel was evaluated at the origin."""


class ParameterError(VortexBlobError, ValueError):
    pass


class CoverageError(VortexBlobError):
    """A grid or label set does not cover the region it must cover.

    ``deficit`` carries the measured missing mass or area when known.
    """

    def __init__(self, message, deficit=None):
        super().__init__(message)
        self.deficit = deficit


class GridMismatchError(VortexBlobError, ValueError):
    pass


class BlowUpError(VortexBlobError, ArithmeticError):
    """Integration left the configured bound; carries the step and radius."""

    def __init__(self, message, time=None, radius=None):
        super().__init__(message)
        self.time = time
        self.radius = radius


class EnergyGuardError(VortexBlobError):
    """Velocity failed the local square-integrability check on a test support."""


class DegenerateRatioError(VortexBlobError, ZeroDivisionError):
    pass


class ResolutionWarning(UserWarning):
    pass


class ExtrapolationWarning(UserWarning):
    pass


class ConvergenceWarning(UserWarning):
    pass
