"""Exception hierarchy shared by every vrtkit module."""


class VrtError(Exception):
    """Base class for all vrtkit errors."""


class DimensionError(VrtError, ValueError):
    """Operand shapes do not agree."""


class NumericError(VrtError, ArithmeticError):
    """A NaN or Inf was produced or supplied."""


class ContractError(VrtError, ValueError):
    """A precondition of an operation was violated."""


class ConfigError(VrtError, ValueError):
    """An invalid configuration value."""
