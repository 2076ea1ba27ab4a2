"""Exception types shared across the package."""


class PhotonicNASError(Exception):
    pass


class DimensionError(PhotonicNASError, ValueError):
    pass


class ContractError(PhotonicNASError, RuntimeError):
    """Raised when an operation is called outside its preconditions."""


class CapacityError(PhotonicNASError, ValueError):
    pass


class ParameterError(PhotonicNASError, ValueError):
    pass


class NonFiniteError(PhotonicNASError, FloatingPointError):
    pass


class StateError(PhotonicNASError, RuntimeError):
    pass


class FormatError(PhotonicNASError, ValueError):
    pass


class DegenerateBatchError(PhotonicNASError, ValueError):
    pass


class SizingError(PhotonicNASError, ValueError):
    def __init__(self, message, nearest=None):
        super().__init__(message)
        self.nearest = nearest


class InsufficientDataError(PhotonicNASError, ValueError):
    pass


class UndefinedCorrelationError(PhotonicNASError, ValueError):
    pass


class CoverageError(PhotonicNASError, ValueError):
    pass
