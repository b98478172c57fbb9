"""Exception types shared across the package."""

from __future__ import annotations


class MirrorBenchError(Exception):
    pass


class ConfigurationError(MirrorBenchError):
    """Bad condition id, missing credentials or an invalid run setting."""


class UsageError(MirrorBenchError):
    """The caller asked for something that has no answer (e.g. empty input)."""


class BackendUnavailable(MirrorBenchError):
    """A remote backend could not be reached after exhausting its retries."""

    def __init__(self, message: str, attempts: int = 0):
        super().__init__(message)
        self.attempts = attempts


class TraceValidationError(MirrorBenchError):
    pass


class SchemaVersionError(MirrorBenchError):
    def __init__(self, found, expected):
        super().__init__(
            f"trace schema version {found!r} does not match supported version {expected!r}"
        )
        self.found = found
        self.expected = expected
