"""Error taxonomy shared across the package.

The CLI maps these onto exit codes (config 1, data 2, training 3), so
raising the right subclass matters more than the message wording.
"""


class ComultiError(Exception):
    """Base class for all package errors."""


class ConfigError(ComultiError):
    """Invalid experiment configuration, CLI flags or config file."""


class DataError(ComultiError):
    """Malformed input files or datasets violating a precondition."""


class TrainingError(ComultiError):
    """A classifier or ensemble could not be fitted."""
