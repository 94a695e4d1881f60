"""Exception hierarchy.

Each family maps to one CLI exit code (see :mod:`canopylab.cli`).
"""

from __future__ import annotations


class CanopyError(Exception):
    """Base class for all library errors."""

    exit_code = 5


class ParameterError(CanopyError, ValueError):
    """Invalid argument value (radius <= 0, alpha out of range, ...)."""

    exit_code = 2


class InputError(CanopyError):
    """Unreadable, malformed or inconsistent input data."""

    exit_code = 3


class MalformedFileError(InputError):
    pass


class UnsupportedFormatError(InputError):
    pass


class TruncationError(InputError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class ParseError(InputError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(ParseError):
    pass


class DimensionError(ParseError):
    pass


class ShortFileError(ParseError):
    pass


class EmptyInputError(InputError):
    pass


class GridMismatchError(InputError):
    """Two rasters that must share a grid do not."""


class NoOverlapError(InputError):
    pass


class RuleSyntaxError(InputError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} at position {position}")
        self.position = position


class UnknownLayerError(InputError):
    def __init__(self, name: str, position: int | None = None):
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unknown layer {name!r}{where}")
        self.name = name
        self.position = position


class InsufficientClassError(InputError):
    pass


class UndefinedBaselineError(InputError):
    pass


class SceneSpecError(ParameterError):
    pass


class NumericError(CanopyError):
    exit_code = 4


class InternalError(CanopyError):
    exit_code = 5


class StageError(CanopyError):
    """A pipeline stage failed; wraps the underlying error."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 5)
