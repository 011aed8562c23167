"""
Core Error Handling Module
Centralized error definitions and process exit-code mapping
"""

from enum import IntEnum
from typing import Any, Dict, Optional


class ExitCode(IntEnum):
    """Process exit codes used by the `lab` command"""

    OK = 0
    INTERNAL = 1
    PARAMETER = 2
    CONVERGENCE = 3
    INVARIANT = 4


class LabError(Exception):
    """Base error class for all lab errors"""

    def __init__(
        self,
        message: str,
        code: str = "INTERNAL_ERROR",
        exit_code: ExitCode = ExitCode.INTERNAL,
        details: Optional[Dict[str, Any]] = None,
    ):
        self.message = message
        self.code = code
        self.exit_code = exit_code
        self.details = details or {}
        super().__init__(self.message)


class ParameterError(LabError):
    """Invalid construction parameters (M, N, depth, η, levels)"""

    def __init__(self, message: str, field: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="PARAMETER_ERROR",
            exit_code=ExitCode.PARAMETER,
            details=details or ({"field": field} if field else {}),
        )


class ConfigError(LabError):
    """Experiment configuration could not be loaded or validated"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="CONFIG_ERROR",
            exit_code=ExitCode.PARAMETER,
            details=details or {},
        )


class VertexNotFoundError(LabError):
    """Vertex lookup failed"""

    def __init__(self, vertex: Any = None, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=f"Vertex {vertex} not found" if vertex is not None else "Vertex not found",
            code="VERTEX_NOT_FOUND",
            exit_code=ExitCode.PARAMETER,
            details=details or ({"vertex": repr(vertex)} if vertex is not None else {}),
        )


class LevelRangeError(LabError):
    """Level index outside the range supported by the graph"""

    def __init__(self, level: int, low: int, high: int):
        super().__init__(
            message=f"Level {level} outside [{low}, {high}]",
            code="LEVEL_OUT_OF_RANGE",
            exit_code=ExitCode.PARAMETER,
            details={"level": level, "low": low, "high": high},
        )


class ScheduleError(LabError):
    """Sequence violates the tail-infimum hypothesis of block scheduling"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="SCHEDULE_ERROR",
            exit_code=ExitCode.PARAMETER,
            details=details or {},
        )


class UndefinedRatioError(LabError):
    """Ratio requested at coincident points"""

    def __init__(self, message: str = "Ratio undefined for x = y", details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="UNDEFINED_RATIO",
            exit_code=ExitCode.PARAMETER,
            details=details or {},
        )


class PreconditionError(LabError):
    """Input map does not satisfy the hypothesis of a construction"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="PRECONDITION_FAILED",
            exit_code=ExitCode.INVARIANT,
            details=details or {},
        )


class ConvergenceError(LabError):
    """Iterative solver stopped before reaching its tolerance"""

    def __init__(self, message: str, residual: float, iterations: int, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=message,
            code="CONVERGENCE_ERROR",
            exit_code=ExitCode.CONVERGENCE,
            details={"residual": residual, "iterations": iterations, **(details or {})},
        )
        self.residual = residual
        self.iterations = iterations


class InvariantViolation(LabError):
    """A verified property failed"""

    def __init__(self, check: str, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(
            message=f"{check}: {message}",
            code="INVARIANT_VIOLATION",
            exit_code=ExitCode.INVARIANT,
            details={"check": check, **(details or {})},
        )
        self.check = check


class ErrorHandler:
    """Centralized mapping from exceptions to exit codes and one-line diagnostics"""

    @staticmethod
    def exit_code_for(exc: BaseException) -> int:
        if isinstance(exc, LabError):
            return int(exc.exit_code)
        # pydantic's ValidationError is a ValueError subclass
        if exc.__class__.__name__ == "ValidationError":
            return int(ExitCode.PARAMETER)
        return int(ExitCode.INTERNAL)

    @staticmethod
    def describe(exc: BaseException) -> str:
        if isinstance(exc, LabError):
            suffix = f" {exc.details}" if exc.details else ""
            return f"[{exc.code}] {exc.message}{suffix}"
        return f"[{exc.__class__.__name__}] {exc}"


def raise_parameter_error(message: str, field: Optional[str] = None, details: Optional[Dict[str, Any]] = None):
    """Helper function to raise parameter errors"""
    raise ParameterError(message=message, field=field, details=details)
