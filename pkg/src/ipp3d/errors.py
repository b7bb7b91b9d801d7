"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Array lengths or grid dimensions do not match."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """An input is outside the physical domain (negative altitude, off-map position)."""


class NumericalConditioningError(RuntimeError):
    """A linear system was too ill-conditioned to solve reliably."""


class InvalidActionError(ValueError):
    """The requested action is not available from the current node."""


class EpisodeDoneError(RuntimeError):
    """The episode has terminated and cannot be stepped further."""


class TrainingHaltError(RuntimeError):
    """Training was halted because parameters or losses became non-finite."""
