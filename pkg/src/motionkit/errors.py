"""Exception hierarchy shared by all modules."""


class MotionKitError(Exception):
    """Base class for every error raised by this package."""


class ParseError(MotionKitError):
    """Input text is not well-formed JSON."""

    def __init__(self, message, line=None, offset=None):
        if line is not None:
            message = f"{message} (line {line}, column {offset})"
        super().__init__(message)
        self.line = line
        self.offset = offset


class SchemaError(MotionKitError):
    """Well-formed input that violates the document schema."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class IoError(MotionKitError, OSError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


class ArgumentError(MotionKitError, ValueError):
    pass


class TopologyError(MotionKitError):
    pass


class AnchorError(MotionKitError):
    pass


class PoolError(MotionKitError):
    pass


class EmptyPoolError(PoolError):
    pass


class ShapeError(MotionKitError, ValueError):
    pass


class ScheduleError(MotionKitError):
    pass


class ContractError(MotionKitError):
    """A caller-supplied denoiser broke its shape contract."""


class NumericError(MotionKitError, ArithmeticError):
    pass


class DegenerateError(MotionKitError, ArithmeticError):
    pass
