"""Exception types shared across the toolkit."""


class InputDomainError(ValueError):
    """An argument is outside the domain an operation is defined on."""


class BehindCameraError(InputDomainError):
    """A point has nonpositive depth in the camera frame and cannot be projected."""


class InvalidStateError(RuntimeError):
    """An operation was called in a state it cannot run in (e.g. backward without forward)."""


class ConfigurationError(ValueError):
    """A configuration is internally inconsistent or incompatible with the data."""


class DatasetError(ValueError):
    """A dataset directory is malformed or incomplete."""
