#!/usr/bin/env python3
"""
Error types shared by the compiler, runtime and command line.

Every error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class IvlaError(Exception):
    """Base error; also used for internal invariant violations"""

    exit_code = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class FactorizationError(IvlaError):
    """A delta monomial had no factor to split at"""


class ConfigError(IvlaError):
    """Invalid configuration, unbound dimension or unsupported combination"""

    exit_code = 2


class ParseError(IvlaError):
    """Syntax error in a program text, with 1-based line and column"""

    exit_code = 2

    def __init__(self, message: str, line: int = 0, col: int = 0):
        location = f"line {line}, column {col}: " if line else ""
        super().__init__(f"{location}{message}")
        self.line = line
        self.col = col


class UseBeforeDefError(ParseError):
    """Name used before it was declared or assigned, or assigned twice"""


class ShapeError(IvlaError):
    """Operands do not conform"""

    exit_code = 2


class DataError(IvlaError):
    """Malformed matrix file or update-stream record"""

    exit_code = 3

    def __init__(self, message: str, record: Optional[int] = None):
        prefix = f"record {record}: " if record is not None else ""
        super().__init__(f"{prefix}{message}")
        self.record = record


class SingularMatrixError(IvlaError):
    """LU elimination hit a pivot below the singularity threshold"""

    exit_code = 4

    def __init__(self, message: str, pivot: int):
        super().__init__(message)
        self.pivot = pivot


class UpdateSingularityError(IvlaError):
    """A Sherman-Morrison step would make the maintained inverse singular"""

    exit_code = 4

    def __init__(self, message: str, step: int = 0):
        super().__init__(message)
        self.step = step


class NonFiniteError(IvlaError):
    """A kernel produced NaN or Inf"""

    exit_code = 4
