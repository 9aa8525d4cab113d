"""Exception types shared across the package.

Each class maps to one machine-parsable CLI error category (see cli.py).
"""

from __future__ import annotations


class HydraError(Exception):
    """Base class for all package errors."""

    category = "error"


class InvalidArgumentError(HydraError, ValueError):
    """A value passed to an operation violates its precondition."""

    category = "invalid-argument"


class ConfigError(HydraError, ValueError):
    """A configuration object violates its invariants."""

    category = "config-error"


class UnsupportedConfigError(ConfigError):
    """A configuration is well-formed but outside the supported regime."""

    category = "unsupported-configuration"


class ParseError(HydraError, ValueError):
    """A serialized artifact could not be decoded. Carries a line number when known."""

    category = "parse-error"

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CorpusValidationError(HydraError, ValueError):
    """A corpus decoded cleanly but violates a corpus-level invariant."""

    category = "validation-error"


class UndefinedMetricError(HydraError, ValueError):
    """A metric has no defined value for the given input."""

    category = "undefined-metric"


class CheckpointVersionError(HydraError):
    """Checkpoint declares a format version this build does not read."""

    category = "unsupported-version"


class CheckpointIntegrityError(HydraError):
    """Checkpoint bytes are truncated, oversized, or fail the body checksum."""

    category = "integrity-error"


class DivergenceError(HydraError):
    """Training produced a non-finite loss."""

    category = "divergence"
