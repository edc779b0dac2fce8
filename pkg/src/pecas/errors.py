"""Exception types shared across the package."""


class PecasError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(PecasError, ValueError):
    """Tensor shapes do not line up for the requested operation."""


class NumericError(PecasError, ValueError):
    """Non-finite values where finite ones are required."""


class DecodeError(PecasError, ValueError):
    """Image payload cannot be decoded (bad magic, depth, or truncation)."""


class LayoutError(PecasError, ValueError):
    """Dataset directory does not follow the pos/ + neg/ convention."""


class ModelFormatError(PecasError, ValueError):
    """Weights file is malformed; the message names the offending field."""


class SpecMismatchError(PecasError, ValueError):
    """A model of the wrong architecture was supplied."""


class RoiError(PecasError, ValueError):
    """Eye region cannot be extracted for a frame."""


class ConfigError(PecasError, ValueError):
    """Pipeline or CLI configuration is invalid."""


class ContractError(PecasError, ValueError):
    """A caller passed a value outside its documented range."""
