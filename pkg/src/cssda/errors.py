"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, format/data/config
problems exit 2, numeric failures exit 3.
"""


class CssdaError(Exception):
    """Base class for all package-specific errors."""


class FormatError(CssdaError):
    """A binary or CSV file does not conform to its on-disk format."""


class DataError(CssdaError):
    """File parsed but its contents are invalid (bad labels, non-finite values...)."""


class ConfigError(CssdaError):
    """Inconsistent or unusable configuration (k mismatch, no labeled data...)."""


class NumericError(CssdaError):
    """A computation produced NaN/Inf, or received non-finite input."""
