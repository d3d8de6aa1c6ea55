"""Exception taxonomy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericalError -> 4.
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""


class ConfigError(ToolkitError):
    """Run configuration is malformed or internally inconsistent."""


class DataError(ToolkitError):
    """Input data violates a precondition (shape, value, or coverage)."""


class SchemaError(DataError):
    """Feature schema cannot be fitted or applied to the given table."""


class NumericalError(ToolkitError):
    """A numerical computation produced a non-finite or unusable result."""
