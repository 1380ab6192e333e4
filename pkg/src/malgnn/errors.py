"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration problems exit 1,
data problems exit 2, numerical failures exit 3.
"""


class ConfigError(ValueError):
    """Invalid hyperparameters, flags or architecture descriptors."""


class GraphError(ValueError):
    """Malformed graph construction input."""


class DatasetError(ValueError):
    """Unreadable, unparsable or degenerate dataset input."""


class ShapeError(ValueError):
    """Tensor shapes that do not line up."""


class NumericalError(ArithmeticError):
    """NaN or infinite values where finite ones are required."""


class CheckpointError(ValueError):
    """Checkpoint file that cannot be read or does not match the model."""
