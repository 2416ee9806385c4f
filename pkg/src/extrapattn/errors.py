"""Exception hierarchy shared by every module."""


class ExtrapAttnError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(ExtrapAttnError, ValueError):
    pass


class ShapeError(ExtrapAttnError, ValueError):
    pass


class InvalidInputError(ExtrapAttnError, ValueError):
    pass


class InvalidPolicyError(ExtrapAttnError, ValueError):
    pass


class NumericError(ExtrapAttnError, ArithmeticError):
    pass


class ResourceError(ExtrapAttnError, MemoryError):
    """Raised when the reference path would exceed its map-size cap."""


class ConfigError(ExtrapAttnError, ValueError):
    pass
