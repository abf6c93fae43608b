"""
Error types shared by every command.

Each error carries the process exit code that `run.main` returns for it:
1 usage error, 2 data error, 3 numerical divergence.
"""
from typing import Optional


class AHCLError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 1


class UsageError(AHCLError):
    """Bad flags, unknown config keys or methods, impossible argument combinations."""

    exit_code = 1


class DataError(AHCLError):
    """Input files or arrays that cannot be used."""

    exit_code = 2


class InvalidInputError(DataError, ValueError):
    """A value violates a documented precondition (NaN, negative cost, y outside its range...)."""


class ShapeMismatchError(InvalidInputError):
    pass


class MalformedRowError(DataError):
    """The CSV tokenizer could not parse a row."""

    def __init__(self, line: Optional[int], message: str):
        self.line = line
        where = f"line {line}" if line is not None else "unknown line"
        super().__init__(f"malformed row at {where}: {message}")


class RaggedRowError(DataError):
    def __init__(self, line: int, expected: int, found: int):
        self.line = line
        self.expected = expected
        self.found = found
        super().__init__(f"ragged row at line {line}: expected {expected} fields, found {found}")


class NonNumericCellError(DataError):
    def __init__(self, line: int, column: int, value: str):
        self.line = line
        self.column = column
        self.value = value
        super().__init__(f"non-numeric cell at line {line}, column {column}: {value!r}")


class CheckpointError(DataError):
    """Missing, truncated or incompatible model checkpoint."""


class StaleCacheError(ValueError):
    """A forward cache was handed to backward after the model changed."""


class DivergenceError(AHCLError, ArithmeticError):
    """Non-finite loss, gradient or exploding parameters."""

    exit_code = 3

    def __init__(self, message: str, epoch: Optional[int] = None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class EigenSolverError(AHCLError):
    exit_code = 3
