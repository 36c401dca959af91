"""Exception hierarchy shared by every module."""

from __future__ import annotations


class UseJudgeError(Exception):
    """Base class for all package errors."""


class OutOfRange(UseJudgeError, ValueError):
    pass


class ArityMismatch(UseJudgeError, ValueError):
    pass


class DanglingClick(UseJudgeError, ValueError):
    pass


class ParseError(UseJudgeError, ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SchemaError(UseJudgeError, ValueError):
    def __init__(self, path: str, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{path}: {message}")
        self.path = path
        self.line = line


class DuplicateLabel(UseJudgeError, ValueError):
    pass


class EmptyDocList(UseJudgeError, ValueError):
    pass


class MissingGold(UseJudgeError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class BackendError(UseJudgeError):
    pass


class BackendExhausted(BackendError):
    pass


class AuthError(BackendError):
    pass


class BackendTimeout(BackendExhausted):
    pass


class Unparseable(UseJudgeError, ValueError):
    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class CacheIo(UseJudgeError, OSError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message if key is None else f"{message} (key={key})")
        self.key = key


class EvenVoterCount(UseJudgeError, ValueError):
    pass


class DimensionMismatch(UseJudgeError, ValueError):
    pass


class NoOverlap(UseJudgeError, ValueError):
    pass


class Undefined(UseJudgeError, ArithmeticError):
    pass


class MissingLabel(UseJudgeError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class DegenerateTarget(UseJudgeError, ValueError):
    pass


class InsufficientRows(UseJudgeError, ValueError):
    pass


class ZeroVariance(UseJudgeError, ArithmeticError):
    pass


class RowMismatch(UseJudgeError, ValueError):
    pass
