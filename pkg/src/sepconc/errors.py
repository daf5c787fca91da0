"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array shapes are incompatible with the requested operation."""


class ConfigurationError(ValueError):
    """A parameter violates a precondition of the construction."""


class NumericError(ArithmeticError):
    """Non-finite data, singular systems, or a non-converging iteration."""


class InvariantError(ValueError):
    """An object does not satisfy a structural invariant it must carry."""


class InvalidWitnessError(ValueError):
    """A supplied inverse does not actually invert the representation."""


class DataFormatError(ValueError):
    """A dataset file is malformed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(RuntimeError):
    """Optimisation diverged."""
