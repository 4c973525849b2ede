"""Exception types shared across the package."""


class SoftCBFError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(SoftCBFError, ValueError):
    """Malformed argument: non-finite entries, shape mismatch, missing field."""


class DomainError(SoftCBFError, ValueError):
    """Scalar parameter outside its admissible range (e.g. theta <= 0)."""


class EmptyTubeError(SoftCBFError, RuntimeError):
    """No boundary-band samples found: the set may be empty or the
    bounding box misplaced."""


class NotStrictlySafeError(SoftCBFError, RuntimeError):
    """A sampled point where the closed loop fails the strict inward-flow
    condition on an active constraint."""

    def __init__(self, message, point=None, constraint=None, lie_value=None):
        super().__init__(message)
        self.point = point
        self.constraint = constraint
        self.lie_value = lie_value


class InvalidCertificateError(SoftCBFError, ValueError):
    """Certificate inputs violate their positivity requirements."""


class BlowUpError(SoftCBFError, RuntimeError):
    """State became non-finite during integration."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time
