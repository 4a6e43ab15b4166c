"""Sandboxed LabScript interpreter.

Scripts run against the rack over real TCP sessions, under three hard
limits: an instruction cap, a virtual-time budget, and a host allowlist.
SAVE can only write inside the session working directory. After every SCPI
query the interpreter drains the instrument's error queue and mirrors
non-zero entries to stderr, which is the feedback signal the agent loop
feeds back to the model.
"""

from __future__ import annotations

import math
import os
import re
from dataclasses import dataclass, field
from typing import Optional

from ..clock import WallClock
from ..formatting import fmt_num, sci6
from ..rack import KIND_SMU, LineSession, parse_resource_id
from ..scpi import parse_scpi, responds
from ..scpi import ParseError as ScpiParseError
from .parser import (
    Expr,
    Move,
    Open,
    Print,
    Program,
    Query,
    Record,
    Save,
    SetVar,
    Sweep,
    WaitIdle,
    Write,
)

EXIT_OK = "OK"
EXIT_SCRIPT_ERROR = "ScriptError"
EXIT_LIMIT_EXCEEDED = "LimitExceeded"

_TEMPLATE_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

# Polling cadence for WAITIDLE, virtual milliseconds.
_POLL_S = 0.005
# Real-time fallback when a response line is due but never arrives.
_READ_TIMEOUT_S = 5.0
# Safety stop for the error-queue drain loop.
_MAX_DRAIN = 64


@dataclass
class Limits:
    max_instructions: int = 100_000
    max_virtual_ms: float = 60_000.0
    allowed_hosts: tuple[str, ...] = ("127.0.0.1", "localhost")


@dataclass
class ExecutionResult:
    exit: str  # OK | ScriptError | LimitExceeded
    stdout: str = ""
    stderr: str = ""
    records: list[tuple] = field(default_factory=list)
    instructions_executed: int = 0
    saved_files: list[str] = field(default_factory=list)
    error_line: Optional[int] = None
    error_message: Optional[str] = None
    limit_kind: Optional[str] = None  # "instructions" | "virtual_ms"

    def exit_description(self) -> str:
        if self.exit == EXIT_SCRIPT_ERROR:
            return f"ScriptError(line {self.error_line}: {self.error_message})"
        if self.exit == EXIT_LIMIT_EXCEEDED:
            return f"LimitExceeded({self.limit_kind})"
        return "OK"

    def to_dict(self) -> dict:
        return {
            "exit": self.exit,
            "stdout": self.stdout,
            "stderr": self.stderr,
            "records": [list(r) for r in self.records],
            "instructions_executed": self.instructions_executed,
            "saved_files": list(self.saved_files),
            "error_line": self.error_line,
            "error_message": self.error_message,
            "limit_kind": self.limit_kind,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExecutionResult":
        return cls(
            exit=data["exit"],
            stdout=data.get("stdout", ""),
            stderr=data.get("stderr", ""),
            records=[tuple(r) for r in data.get("records", [])],
            instructions_executed=data.get("instructions_executed", 0),
            saved_files=list(data.get("saved_files", [])),
            error_line=data.get("error_line"),
            error_message=data.get("error_message"),
            limit_kind=data.get("limit_kind"),
        )


class _ScriptError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(message)
        self.line = line
        self.message = message


class _LimitExceeded(Exception):
    def __init__(self, kind: str):
        super().__init__(kind)
        self.kind = kind


def sweep_count(start: float, stop: float, step: float) -> int:
    """Iteration count: floor((stop-start)/step + 1e-9) + 1."""
    return int(math.floor((stop - start) / step + 1e-9)) + 1


class _Runner:
    def __init__(self, registry, limits: Limits, workdir: str, clock):
        self.registry = {d.resource_id: d for d in registry}
        self.limits = limits
        self.workdir = os.path.normpath(os.path.abspath(workdir))
        self.clock = clock
        self.env: dict[str, object] = {}
        self.records: list[tuple] = []
        self.record_header: Optional[list[str]] = None
        self.stdout_lines: list[str] = []
        self.stderr_lines: list[str] = []
        self.saved: list[str] = []
        self.instructions = 0
        self.sessions: dict[str, tuple[LineSession, str]] = {}
        self.t0 = clock.now()

    # ------------------------- bookkeeping -------------------------

    def charge(self) -> None:
        # check-then-count: a statement past the cap never runs, so the
        # reported count stays <= max_instructions
        if self.instructions >= self.limits.max_instructions:
            raise _LimitExceeded("instructions")
        self.instructions += 1
        self.check_time()

    def check_time(self) -> None:
        if (self.clock.now() - self.t0) * 1000.0 > self.limits.max_virtual_ms:
            raise _LimitExceeded("virtual_ms")

    def render(self, template: str, line: int) -> str:
        def substitute(match):
            name = match.group(1)
            if name not in self.env:
                raise _ScriptError(line, f"undefined variable {name!r}")
            value = self.env[name]
            return fmt_num(value) if isinstance(value, float) else str(value)

        return _TEMPLATE_RE.sub(substitute, template)

    def evaluate(self, expr: Expr, line: int) -> float:
        def walk(node):
            kind = node[0]
            if kind == "num":
                return node[1]
            if kind == "var":
                name = node[1]
                if name not in self.env:
                    raise _ScriptError(line, f"undefined variable {name!r}")
                value = self.env[name]
                if not isinstance(value, float):
                    raise _ScriptError(line, f"variable {name!r} is not numeric")
                return value
            if kind == "neg":
                return -walk(node[1])
            a, b = walk(node[1]), walk(node[2])
            if kind == "+":
                return a + b
            if kind == "-":
                return a - b
            if kind == "*":
                return a * b
            if kind == "/":
                if b == 0:
                    raise _ScriptError(line, "division by zero")
                return a / b
            raise _ScriptError(line, f"bad expression node {kind!r}")

        return walk(expr.node)

    def session(self, alias: str, line: int) -> tuple[LineSession, str]:
        try:
            return self.sessions[alias]
        except KeyError:
            raise _ScriptError(line, f"alias {alias!r} is not open") from None

    # ------------------------- statements -------------------------

    def run(self, statements) -> None:
        for statement in statements:
            self.charge()
            handler = self.DISPATCH[type(statement)]
            handler(self, statement)

    def do_open(self, stmt: Open) -> None:
        try:
            host, port = parse_resource_id(stmt.resource_id)
        except ValueError as exc:
            raise _ScriptError(stmt.line, str(exc)) from None
        if host not in self.limits.allowed_hosts:
            raise _ScriptError(stmt.line, f"host not allowed: {host}")
        protocol = stmt.protocol
        if protocol is None:
            descriptor = self.registry.get(stmt.resource_id)
            if descriptor is None:
                raise _ScriptError(
                    stmt.line, f"unknown resource {stmt.resource_id!r}; specify SCPI or STAGE"
                )
            protocol = "SCPI" if descriptor.kind == KIND_SMU else "STAGE"
        try:
            session = LineSession(host, port, timeout=_READ_TIMEOUT_S)
        except OSError as exc:
            raise _ScriptError(stmt.line, f"cannot connect to {stmt.resource_id}: {exc}") from None
        # Probe so a busy instrument fails here, not mid-script.
        probe = session.query("*IDN?" if protocol == "SCPI" else "STATUS?")
        if probe is None or probe.startswith("ERR 3"):
            session.close()
            raise _ScriptError(stmt.line, f"resource busy: {stmt.resource_id}")
        previous = self.sessions.pop(stmt.alias, None)
        if previous is not None:
            previous[0].close()
        self.sessions[stmt.alias] = (session, protocol)

    def _scpi_exchange(self, session: LineSession, line_no: int, command: str,
                       want_reply: bool) -> Optional[str]:
        """Send one SCPI line; read replies for the queries it contains.

        Returns the first reply when ``want_reply``. The frozen command tree
        tells us which queries answer, so a rejected header (no reply by
        spec) cannot stall the stream.
        """
        try:
            commands = parse_scpi(command)
        except ScpiParseError:
            commands = None  # instrument will queue -100; no replies follow
        session.send(command)
        replies = []
        if commands:
            for cmd in commands:
                if responds(cmd):
                    reply = session.read_line(_READ_TIMEOUT_S)
                    if reply is None:
                        self.stderr_lines.append(
                            f"line {line_no}: no response to {command!r}"
                        )
                        break
                    replies.append(reply)
        return replies[0] if (want_reply and replies) else None

    def _drain_scpi_errors(self, session: LineSession, line_no: int) -> None:
        for _ in range(_MAX_DRAIN):
            reply = session.query(":SYST:ERR?", _READ_TIMEOUT_S)
            if reply is None:
                self.stderr_lines.append(f"line {line_no}: no response to :SYST:ERR?")
                return
            if reply.startswith("0,"):
                return
            self.stderr_lines.append(f"line {line_no}: SCPI error {reply}")

    def do_write(self, stmt: Write) -> None:
        session, protocol = self.session(stmt.alias, stmt.line)
        command = self.render(stmt.template, stmt.line)
        if protocol == "SCPI":
            self._scpi_exchange(session, stmt.line, command, want_reply=False)
        else:
            reply = session.query(command, _READ_TIMEOUT_S)
            if reply is not None and reply.startswith("ERR"):
                self.stderr_lines.append(f"line {stmt.line}: stage error {reply}")

    def do_query(self, stmt: Query) -> None:
        session, protocol = self.session(stmt.alias, stmt.line)
        command = self.render(stmt.template, stmt.line)
        if protocol == "SCPI":
            reply = self._scpi_exchange(session, stmt.line, command, want_reply=True)
            self._drain_scpi_errors(session, stmt.line)
        else:
            reply = session.query(command, _READ_TIMEOUT_S)
            if reply is not None and reply.startswith("ERR"):
                self.stderr_lines.append(f"line {stmt.line}: stage error {reply}")
        text = reply if reply is not None else ""
        try:
            self.env[stmt.bind_var] = float(text)
        except ValueError:
            self.env[stmt.bind_var] = text

    def do_move(self, stmt: Move) -> None:
        session, protocol = self.session(stmt.alias, stmt.line)
        if protocol != "STAGE":
            raise _ScriptError(stmt.line, f"alias {stmt.alias!r} is not a stage")
        x = self.evaluate(stmt.x_expr, stmt.line)
        y = self.evaluate(stmt.y_expr, stmt.line)
        reply = session.query(f"MOVE {fmt_num(x)} {fmt_num(y)}", _READ_TIMEOUT_S)
        if reply != "OK":
            self.stderr_lines.append(f"line {stmt.line}: stage error {reply}")

    def do_waitidle(self, stmt: WaitIdle) -> None:
        session, protocol = self.session(stmt.alias, stmt.line)
        if protocol != "STAGE":
            raise _ScriptError(stmt.line, f"alias {stmt.alias!r} is not a stage")
        deadline = self.clock.now() + stmt.timeout_ms / 1000.0
        while True:
            self.check_time()
            status = session.query("STATUS?", _READ_TIMEOUT_S)
            if status == "IDLE":
                return
            if status != "MOVING":
                raise _ScriptError(stmt.line, f"stage error {status}")
            if self.clock.now() >= deadline:
                raise _ScriptError(
                    stmt.line, f"WAITIDLE timed out after {fmt_num(stmt.timeout_ms)} ms"
                )
            self.clock.sleep(_POLL_S)

    def do_set(self, stmt: SetVar) -> None:
        self.env[stmt.var] = self.evaluate(stmt.expr, stmt.line)

    def do_sweep(self, stmt: Sweep) -> None:
        count = sweep_count(stmt.start, stmt.stop, stmt.step)
        for i in range(count):
            if i > 0:
                self.charge()  # each iteration is an instruction
            self.env[stmt.var] = stmt.start + i * stmt.step
            self.run(stmt.body)

    def do_record(self, stmt: Record) -> None:
        values = tuple(self.evaluate(expr, stmt.line) for expr in stmt.exprs)
        if self.record_header is None:
            self.record_header = [expr.source for expr in stmt.exprs]
        self.records.append(values)

    def do_save(self, stmt: Save) -> None:
        relative = stmt.path
        if os.path.isabs(relative):
            raise _ScriptError(stmt.line, "path escapes sandbox")
        candidate = os.path.normpath(os.path.join(self.workdir, relative))
        if os.path.commonpath([candidate, self.workdir]) != self.workdir:
            raise _ScriptError(stmt.line, "path escapes sandbox")
        parent = os.path.dirname(candidate)
        if parent and not os.path.isdir(parent):
            os.makedirs(parent, exist_ok=True)
        header = self.record_header or []
        width = len(self.records[0]) if self.records else len(header)
        if not header:
            header = [f"v{i}" for i in range(width)]
        lines = [",".join(header)]
        for row in self.records:
            lines.append(",".join(sci6(v) for v in row))
        with open(candidate, "w", encoding="ascii") as handle:
            handle.write("\n".join(lines) + "\n")
        self.saved.append(os.path.relpath(candidate, self.workdir))

    def do_print(self, stmt: Print) -> None:
        self.stdout_lines.append(self.render(stmt.template, stmt.line))

    DISPATCH = {
        Open: do_open,
        Write: do_write,
        Query: do_query,
        Move: do_move,
        WaitIdle: do_waitidle,
        SetVar: do_set,
        Sweep: do_sweep,
        Record: do_record,
        Save: do_save,
        Print: do_print,
    }

    def close_all(self) -> None:
        for session, _ in self.sessions.values():
            session.close()
        self.sessions.clear()


def execute(
    program: Program,
    registry,
    limits: Optional[Limits] = None,
    workdir: str = ".",
    clock=None,
) -> ExecutionResult:
    """Run a parsed program against the rack; never raises for script faults."""
    runner = _Runner(
        registry,
        limits if limits is not None else Limits(),
        workdir,
        clock if clock is not None else WallClock(),
    )
    exit_code, line, message, kind = EXIT_OK, None, None, None
    try:
        runner.run(program.statements)
    except _ScriptError as err:
        exit_code, line, message = EXIT_SCRIPT_ERROR, err.line, err.message
    except _LimitExceeded as err:
        exit_code, kind = EXIT_LIMIT_EXCEEDED, err.kind
    finally:
        runner.close_all()

    def joined(lines):
        return "".join(text + "\n" for text in lines)

    if exit_code == EXIT_SCRIPT_ERROR:
        runner.stderr_lines.append(f"line {line}: {message}")
    elif exit_code == EXIT_LIMIT_EXCEEDED:
        runner.stderr_lines.append(f"limit exceeded: {kind}")
    return ExecutionResult(
        exit=exit_code,
        stdout=joined(runner.stdout_lines),
        stderr=joined(runner.stderr_lines),
        records=runner.records,
        instructions_executed=runner.instructions,
        saved_files=runner.saved,
        error_line=line,
        error_message=message,
        limit_kind=kind,
    )
