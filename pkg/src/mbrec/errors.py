"""Exception taxonomy shared across the package.

Maps onto CLI exit codes: ConfigError -> 1, DataError -> 2,
NumericalError -> 3.
"""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(RuntimeError):
    """An internal API contract was violated (e.g. non-scalar loss)."""


class ConfigError(ValueError):
    """Invalid configuration or command-line usage."""


class DataError(ValueError):
    """Input data is malformed, empty, or inconsistent."""


class NumericalError(RuntimeError):
    """Numerical failure: divergence, NaN loss, or a failed gradient check."""
