"""Error taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
NumericError -> 4.  Programming-contract violations (mixed coordinate
modes, single-signed orientation input, ...) raise plain ValueError.
"""


class ConcentraError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(ConcentraError):
    """Invalid or inconsistent run configuration."""


class DataError(ConcentraError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    """Unreadable input file (bad JSON/CSV, malformed geometry, ...)."""


class GeometryError(DataError):
    """Structurally invalid geometry (unclosed ring, too few vertices)."""


class ConflictError(DataError):
    """Duplicate keys where uniqueness is required."""


class NumericError(ConcentraError):
    """A numeric procedure failed (singular system, failed optimization)."""


class SingularDesignError(NumericError):
    """Least-squares design matrix is singular (constant predictor)."""


class InsufficientDataError(DataError):
    """Not enough observations to carry out the requested operation."""
