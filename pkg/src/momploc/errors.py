"""Exception types raised across the package."""


class ConfigError(ValueError):
    """A configuration value is out of range or inconsistent."""


class InvalidDirectionError(ValueError):
    """A direction component or vector is not a valid unit direction."""


class ShapeError(ValueError):
    """Array dimensions do not agree."""


class DegenerateCombinerError(ValueError):
    """W^H W is not positive definite, so the combiner cannot be whitened."""


class CapacityError(MemoryError):
    """The requested dictionary is too large to enumerate."""


class UnlocalizableError(ValueError):
    """The localization normal equations are singular."""

    def __init__(self, message, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions
