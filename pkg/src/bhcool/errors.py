"""Exception hierarchy.

The CLI maps :class:`ValidationError` to exit code 1 and
:class:`NumericalError` to exit code 2.
"""


class BHCoolError(Exception):
    pass


class ValidationError(BHCoolError, ValueError):
    pass


class ConfigError(ValidationError):
    """Config file does not match the schema; message starts with the field path."""


class DomainError(ValidationError):
    """Operation requested on incompatible objects (e.g. states in different manifolds)."""


class CapacityError(ValidationError):
    """Requested basis or truncation exceeds the dense-matrix guard."""


class NumericalError(BHCoolError, ArithmeticError):
    pass


class DegeneracyError(NumericalError):
    pass


class TrackingError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


class IdentifiabilityError(NumericalError):
    def __init__(self, msg, null_direction=None):
        super().__init__(msg)
        self.null_direction = null_direction
