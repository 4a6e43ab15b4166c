"""LabScript: the sandbox-executable instrument-control DSL."""

from .interpreter import (
    EXIT_LIMIT_EXCEEDED,
    EXIT_OK,
    EXIT_SCRIPT_ERROR,
    ExecutionResult,
    Limits,
    execute,
    sweep_count,
)
from .parser import (
    GRAMMAR_SUMMARY,
    LABSCRIPT_VERSION,
    LabScriptParseError,
    Program,
    parse_program,
)

__all__ = [
    "EXIT_LIMIT_EXCEEDED",
    "EXIT_OK",
    "EXIT_SCRIPT_ERROR",
    "ExecutionResult",
    "GRAMMAR_SUMMARY",
    "LABSCRIPT_VERSION",
    "LabScriptParseError",
    "Limits",
    "Program",
    "execute",
    "parse_program",
    "sweep_count",
]
