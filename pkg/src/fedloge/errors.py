"""Exception hierarchy shared across the package."""


class FedLoGeError(Exception):
    """Base class for all errors raised by fedloge."""


class DimensionError(FedLoGeError, ValueError):
    pass


class DegenerateError(FedLoGeError, ValueError):
    """A vector, column, mask or profile has collapsed (zero norm, zero count...)."""


class NumericError(FedLoGeError, ArithmeticError):
    pass


class ProtocolError(FedLoGeError, RuntimeError):
    """Federation protocol violated, e.g. aggregating an empty round."""


class ValidationError(FedLoGeError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CapacityError(FedLoGeError, ValueError):
    pass


class ConfigError(ValidationError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class StageError(FedLoGeError, RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause!r}")
        self.stage = stage
