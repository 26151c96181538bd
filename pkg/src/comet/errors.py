"""Shared exception types."""


class CometError(Exception):
    """Base class for all toolkit errors."""


class KbError(CometError):
    """Knowledge-base load/lookup failure (schema violation, dangling reference, unknown entry)."""


class AsmParseError(CometError):
    """Lexical or structural error while parsing a basic block."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            loc = f"line {line}" + (f", col {column}" if column is not None else "")
            message = f"{loc}: {message}"
        super().__init__(message)


class ModelError(CometError):
    """Cost-model failure (spawn, timeout, bad output, missing table entry)."""


class PerturbError(CometError):
    """Perturbation sampler failure."""


class PreservationError(PerturbError):
    """Retry budget exhausted while trying to preserve a feature set."""

    def __init__(self, message: str, feature=None):
        self.feature = feature
        super().__init__(message)


class SpaceLimitError(PerturbError):
    """Exhaustive enumeration exceeded the caller's limit."""


class DatasetError(CometError):
    """Dataset ingestion failure."""
