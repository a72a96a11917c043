"""Exception types shared across the package."""


class MemPairError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(MemPairError, ValueError):
    pass


class CapacityExhausted(MemPairError, RuntimeError):
    """Raised when a delete would overrun the deletion budget."""


class EmptyMemory(MemPairError, RuntimeError):
    """Raised on a delete before any curvature pair has been admitted."""


class DenseTooLarge(MemPairError, ValueError):
    pass


class ModeError(MemPairError, ValueError):
    pass


class StreamFormatError(MemPairError, ValueError):
    def __init__(self, message, line_no=None):
        self.line_no = line_no
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)


class StreamValidationError(MemPairError, ValueError):
    def __init__(self, message, t_index=None):
        self.t_index = t_index
        if t_index is not None:
            message = f"event {t_index}: {message}"
        super().__init__(message)


class ComparatorError(MemPairError, RuntimeError):
    pass


class ConfigError(MemPairError, ValueError):
    pass
