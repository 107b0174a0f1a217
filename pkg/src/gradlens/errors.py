"""Exception types shared across the package."""


class GradlensError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GradlensError):
    """Invalid configuration value or combination."""


class ShapeError(GradlensError):
    """Array dimensions do not match what an operation requires."""


class ContractError(GradlensError):
    """A caller violated an operation's precondition."""


class NumericError(GradlensError):
    """Non-finite values appeared where finite ones are required."""


class BoundsError(GradlensError):
    """Index or window falls outside the valid range of a series."""


class DomainError(GradlensError):
    """Argument outside the mathematical domain of the operation."""
