"""Exception hierarchy shared by every subsystem."""


class MemoryMambaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(MemoryMambaError, ValueError):
    """Operand shapes are incompatible."""


class NumericError(MemoryMambaError, ArithmeticError):
    """A value is non-finite or an operation is undefined at its input."""


class ContractError(MemoryMambaError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigurationError(MemoryMambaError, ValueError):
    """Configuration is invalid or inconsistent with the data/model."""


class ManifestError(MemoryMambaError):
    """A dataset directory does not have the expected layout."""


class DataError(MemoryMambaError):
    """Reading, decoding, or writing data failed."""


class CheckpointError(MemoryMambaError):
    """A checkpoint file is missing, truncated, or corrupt."""
