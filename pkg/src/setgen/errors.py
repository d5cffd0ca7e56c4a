"""Exception types shared across the package."""


class SetgenError(Exception):
    """Base class for all package errors."""


class ShapeError(SetgenError):
    """Operand shapes do not conform."""


class NumericsError(SetgenError):
    """A non-finite value was produced while debug checks are enabled."""


class ContractError(SetgenError):
    """An API precondition was violated."""


class CapacityError(SetgenError):
    """Requested set size exceeds the creator's capacity."""


class GenerationError(SetgenError):
    """Rejection sampling failed to produce a valid set."""


class IoError(SetgenError):
    """Dataset or checkpoint file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(SetgenError):
    """Invalid configuration file."""


class CheckpointError(SetgenError):
    """Checkpoint failed integrity verification."""
