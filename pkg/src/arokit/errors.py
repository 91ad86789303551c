"""Exception hierarchy shared across the toolkit.

The CLI maps these onto stable exit codes: ConfigError -> 1,
DataFormatError -> 2, NumericalError -> 3.
"""


class ArokitError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class ConfigError(ArokitError):
    """Invalid configuration or unusable combination of options."""

    exit_code = 1


class DataFormatError(ArokitError):
    """Malformed or inconsistent input data (files, streams, manifests)."""

    exit_code = 2


class NumericalError(ArokitError):
    """Numerical failure: non-finite intermediate, zero norm, divergence."""

    exit_code = 3
