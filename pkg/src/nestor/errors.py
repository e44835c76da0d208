"""Exception hierarchy shared across the package.

The CLI maps these onto stable exit codes, so new error kinds should
subclass one of the existing families rather than raising bare ValueError.
"""


class NestorError(Exception):
    """Base class for all package errors."""


class ShapeError(NestorError):
    """Operand shapes are incompatible; message names both shapes."""


class LevelTooShortError(ShapeError):
    """A sequence is shorter than the convolution kernel; the caller
    decides whether to truncate the pyramid."""


class EmptyInputError(NestorError):
    """An operation received an empty sequence it cannot handle."""


class NonFiniteError(NestorError):
    """A NaN or Inf appeared where a finite value is required."""


class ConfigError(NestorError):
    """Invalid or unknown configuration; message names the key path."""


class DataError(NestorError):
    """Malformed or inconsistent input data; message carries the line
    number or sentence id where available."""


class CompatibilityError(NestorError):
    """Checkpoint and data disagree (e.g. unknown entity labels)."""
