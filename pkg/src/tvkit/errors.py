"""Exception hierarchy shared across tvkit."""

from __future__ import annotations


class TvkitError(Exception):
    """Base class for all tvkit errors."""


class ShapeError(TvkitError, ValueError):
    """Block specs or array shapes do not line up."""


class StaleTaskVectorError(TvkitError):
    """A task vector was built against a different base model."""


class BlockIndexError(TvkitError, KeyError):
    """A coefficient set or plan names a block that does not exist."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


class FormatError(TvkitError, ValueError):
    """Malformed TVCK or IDX input."""

    def __init__(self, message: str, offset: int | None = None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericError(TvkitError, ArithmeticError):
    """Non-finite activations, losses or parameters."""


class LeakageError(TvkitError):
    """The target task's own task vector was offered to a transfer method."""


class ConfigError(TvkitError, ValueError):
    """Invalid configuration or precondition violation."""
