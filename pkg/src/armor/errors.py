"""Exception types raised across the package."""


class ArmorError(Exception):
    pass


class DimensionError(ArmorError, ValueError):
    """Array shapes of two inputs disagree."""


class ParameterError(ArmorError, ValueError):
    """A scalar argument or option is outside its admissible range."""


class DataError(ArmorError, ValueError):
    """Dataset contents are inconsistent with the model they are scored against."""


class DatasetParseError(ArmorError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CapacityError(ArmorError, RuntimeError):
    """Requested enumeration or instance is larger than the solver supports."""


class NumericalFailure(ArmorError, FloatingPointError):
    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
