"""Shared exception types."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class DimensionError(ContractError):
    """Tensor or array shapes are incompatible with the operation."""


class NumericError(ArithmeticError):
    """Non-finite values appeared where finite math was required."""


class ConfigError(ValueError):
    """A run configuration failed validation."""


class DatasetFormatError(ValueError):
    """A persisted dataset or checkpoint failed to parse or verify."""
