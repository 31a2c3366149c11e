"""Exception hierarchy shared across the package."""


class SplatAlignError(Exception):
    """Base class for all package errors."""


class InvalidRotationError(SplatAlignError, ValueError):
    pass


class InvalidScaleError(SplatAlignError, ValueError):
    pass


class DegenerateGeometryError(SplatAlignError, ValueError):
    pass


class PlyFormatError(SplatAlignError, ValueError):
    pass


class PlyDataError(SplatAlignError, ValueError):
    pass


class NoDepthError(SplatAlignError, ValueError):
    pass


class RegistrationError(SplatAlignError, RuntimeError):
    """Raised when an alignment stage cannot produce a transform."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class ConfigError(SplatAlignError, ValueError):
    pass


class NoSignalError(SplatAlignError, ValueError):
    pass
