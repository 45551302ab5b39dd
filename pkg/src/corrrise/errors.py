"""Exception hierarchy shared across the package."""


class CorrRiseError(Exception):
    """Base class for every error raised by corrrise."""


class ContractError(CorrRiseError, ValueError):
    """An argument violates an operation's precondition."""


class ConfigError(ContractError):
    """Invalid configuration values."""


class DegenerateInputError(CorrRiseError, ArithmeticError):
    """A zero-norm vector reached an operation that cannot handle it."""


class BackendError(CorrRiseError, RuntimeError):
    """The embedding backend failed to produce an embedding."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class UnsupportedOperationError(CorrRiseError, NotImplementedError):
    pass


class DataError(CorrRiseError):
    """Input data (manifest rows, image files) could not be used."""


class FormatError(DataError):
    """A binary saliency file is malformed."""
