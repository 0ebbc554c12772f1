"""Exception hierarchy shared across the package."""


class IsoregError(Exception):
    """Base class for all package errors."""


class ContractViolation(IsoregError, ValueError):
    """An operation was called outside its documented preconditions."""


class DegenerateInputError(IsoregError, ValueError):
    """Input is too small or too rank-deficient for a statistical operation."""


class EvaluationError(IsoregError, ArithmeticError):
    """A loss or objective evaluated to a non-finite value."""


class UsageError(IsoregError, RuntimeError):
    """API used in the wrong order, e.g. backward without a recorded forward."""


class ConfigError(IsoregError, ValueError):
    """Invalid configuration (bad field, unknown domain, empty dataset...)."""


class SamplingError(IsoregError, ValueError):
    """Not enough eligible classes or examples to sample an episode."""


class NonFiniteGradientError(IsoregError, ArithmeticError):
    """An optimizer step received NaN/Inf gradients."""


# data loading

class DataFormatError(IsoregError, ValueError):
    """A corpus or embedding file could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedJSONError(DataFormatError):
    pass


class MissingFieldError(DataFormatError):
    pass


# checkpoints

class CheckpointError(IsoregError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    pass


class UnsupportedVersionError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class CorruptCheckpointError(CheckpointError):
    pass
