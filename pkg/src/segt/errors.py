"""Exception hierarchy shared by all modules."""


class SEGTError(Exception):
    pass


class IngestionError(SEGTError, ValueError):
    """A point record could not be admitted (non-finite or malformed)."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DomainError(SEGTError, ValueError):
    """Argument outside the domain of a curve or transform."""


class ConfigError(SEGTError, ValueError):
    """Invalid configuration. ``key`` and ``line`` are set when known."""

    def __init__(self, message, key=None, line=None):
        super().__init__(message)
        self.key = key
        self.line = line


class ContractError(SEGTError, ValueError):
    """Shapes or sizes that do not agree with each other."""


class NumericError(SEGTError, FloatingPointError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class FormatError(SEGTError, OSError):
    """A binary container is malformed."""


class TruncatedError(FormatError):
    pass
