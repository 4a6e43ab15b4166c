"""The autonomous agent loop: compose prompts, call the model, gate through
approval in STEP mode, execute in the sandbox, feed results back, persist
every iteration.

The model cannot self-certify: a DONE reply only terminates the session when
the configured success predicate also holds against the actual execution.
"""

from __future__ import annotations

import json
import os
import re
import threading
import uuid
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import events as ev
from .clock import VirtualClock
from .labscript import (
    ExecutionResult,
    LabScriptParseError,
    Limits,
    execute,
    parse_program,
)
from .labscript.parser import GRAMMAR_SUMMARY
from .llm import ChatRequest, DEFAULT_MODEL, LlmError

MODE_AUTO = "AUTO"
MODE_STEP = "STEP"

RUNNING = "Running"
AWAITING_APPROVAL = "AwaitingApproval"
SUCCEEDED = "Succeeded"
FAILED = "Failed"

SESSION_FILE_VERSION = 1
ARTIFACT_TEMPLATE = "autolab_code_iter{index}.labs"

_FENCE_RE = re.compile(r"```([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.DOTALL)
_DONE_RE = re.compile(r"\bDONE\b")

_DEFAULT_PROMPT_PATH = os.path.join(os.path.dirname(__file__), "data", "system_prompt.txt")


def default_system_prompt() -> str:
    with open(_DEFAULT_PROMPT_PATH, "r", encoding="utf-8") as handle:
        return handle.read().strip()


class ExtractError(ValueError):
    pass


class ApprovalConflict(RuntimeError):
    """Approve/reject arrived while the session was not awaiting approval."""


@dataclass
class ParsedReply:
    code: Optional[str]
    done: bool
    warnings: list[str] = field(default_factory=list)


def parse_reply(text: str) -> ParsedReply:
    blocks = [(label.lower(), body) for label, body in _FENCE_RE.findall(text)]
    labscript_blocks = [body for label, body in blocks if label == "labscript"]
    outside = _FENCE_RE.sub("", text)
    done = bool(_DONE_RE.search(outside))
    warnings = []
    if len(labscript_blocks) > 1:
        warnings.append(
            f"warning: {len(labscript_blocks) - 1} extra labscript block(s) ignored; "
            "only the first one runs."
        )
    if not labscript_blocks:
        return ParsedReply(code=None, done=done, warnings=warnings)
    return ParsedReply(code=labscript_blocks[0].strip("\n"), done=done, warnings=warnings)


def extract_code_block(text: str) -> tuple[str, bool]:
    """First fenced ``labscript`` block plus the DONE flag; raises ExtractError."""
    parsed = parse_reply(text)
    if parsed.code is None:
        raise ExtractError("no code block")
    return parsed.code, parsed.done


# ------------------------------ predicates ------------------------------

@dataclass
class FileRows:
    path: str
    min_rows: int

    def evaluate(self, result: Optional[ExecutionResult], workdir: str) -> bool:
        full = os.path.join(workdir, self.path)
        try:
            with open(full, "r", encoding="utf-8") as handle:
                lines = handle.read().splitlines()
        except OSError:
            return False
        return max(0, len(lines) - 1) >= self.min_rows  # header excluded

    def to_dict(self):
        return {"file_rows": {"path": self.path, "min_rows": self.min_rows}}


@dataclass
class RecordsAtLeast:
    count: int

    def evaluate(self, result: Optional[ExecutionResult], workdir: str) -> bool:
        n = len(result.records) if result is not None else 0
        return n >= self.count

    def to_dict(self):
        return {"records_at_least": self.count}


@dataclass
class AlwaysManual:
    marked: bool = False

    def evaluate(self, result, workdir) -> bool:
        return self.marked

    def to_dict(self):
        return {"always_manual": True}


@dataclass
class And:
    parts: list

    def evaluate(self, result, workdir) -> bool:
        return all(part.evaluate(result, workdir) for part in self.parts)

    def to_dict(self):
        return {"and": [part.to_dict() for part in self.parts]}


def parse_predicate(spec) -> object:
    """Accepts predicate dicts or the compact CLI form
    ``file_rows:iv.csv:21 AND records_at_least:1``."""
    if isinstance(spec, str):
        parts = [p.strip() for p in spec.split(" AND ") if p.strip()]
        parsed = [_parse_compact(p) for p in parts]
        return parsed[0] if len(parsed) == 1 else And(parsed)
    if isinstance(spec, dict):
        if "and" in spec:
            return And([parse_predicate(p) for p in spec["and"]])
        if "file_rows" in spec:
            inner = spec["file_rows"]
            return FileRows(path=inner["path"], min_rows=int(inner["min_rows"]))
        if "records_at_least" in spec:
            return RecordsAtLeast(int(spec["records_at_least"]))
        if "always_manual" in spec:
            return AlwaysManual()
    raise ValueError(f"bad predicate spec: {spec!r}")


def _parse_compact(text: str):
    fields = text.split(":")
    if fields[0] == "file_rows" and len(fields) == 3:
        return FileRows(path=fields[1], min_rows=int(fields[2]))
    if fields[0] == "records_at_least" and len(fields) == 2:
        return RecordsAtLeast(int(fields[1]))
    if fields[0] == "always_manual" and len(fields) == 1:
        return AlwaysManual()
    raise ValueError(f"bad predicate spec: {text!r}")


def evaluate_success(predicate_spec, result: Optional[ExecutionResult], workdir: str) -> bool:
    return parse_predicate(predicate_spec).evaluate(result, workdir)


# ------------------------------- session --------------------------------

@dataclass
class AgentMessage:
    role: str
    content: str

    def to_dict(self):
        return {"role": self.role, "content": self.content}


@dataclass
class Iteration:
    index: int  # 1-based
    proposed_code: str
    artifact_path: str
    approval: dict = field(default_factory=lambda: {"status": "not_required"})
    exec: Optional[ExecutionResult] = None
    warnings: list[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "index": self.index,
            "proposed_code": self.proposed_code,
            "artifact_path": self.artifact_path,
            "approval": self.approval,
            "exec": self.exec.to_dict() if self.exec else None,
            "warnings": self.warnings,
        }


@dataclass
class AgentSession:
    goal: str
    mode: str = MODE_AUTO
    max_iters: int = 8
    id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    transcript: list[AgentMessage] = field(default_factory=list)
    iterations: list[Iteration] = field(default_factory=list)
    state: str = RUNNING
    fail_reason: Optional[str] = None

    def to_dict(self):
        return {
            "version": SESSION_FILE_VERSION,
            "id": self.id,
            "goal": self.goal,
            "mode": self.mode,
            "max_iters": self.max_iters,
            "state": self.state,
            "fail_reason": self.fail_reason,
            "transcript": [m.to_dict() for m in self.transcript],
            "iterations": [i.to_dict() for i in self.iterations],
        }


def initial_user_message(goal: str, resources, grammar: str = GRAMMAR_SUMMARY) -> str:
    listing = "\n".join(f"  {d.resource_id}  ({d.kind}: {d.label})" for d in resources)
    return (
        f"Goal: {goal}\n\n"
        "Available instrument resources:\n"
        f"{listing}\n\n"
        "You control them by writing LabScript.\n"
        f"{grammar}\n\n"
        "Rules:\n"
        "- Reply with exactly one fenced code block labeled labscript.\n"
        "- Use OPEN with the resource ids listed above.\n"
        "- Execution feedback (exit status, stdout, stderr, record count) follows each reply.\n"
        "- When the goal is met, reply DONE plus a final code block.\n"
    )


def reminder_message(goal: str) -> str:
    return (
        f"Goal: {goal}. Continue building and refining the script until "
        "complete. Reply DONE plus a final code block when finished."
    )


def start_session(goal: str, resources, mode: str = MODE_AUTO, max_iters: int = 8,
                  system_prompt: Optional[str] = None) -> AgentSession:
    session = AgentSession(goal=goal, mode=mode, max_iters=max_iters)
    session.transcript.append(
        AgentMessage("system", system_prompt or default_system_prompt())
    )
    session.transcript.append(AgentMessage("user", initial_user_message(goal, resources)))
    return session


def compose_messages(session: AgentSession) -> list[AgentMessage]:
    """Transcript plus a trailing goal reminder once iterations exist."""
    messages = list(session.transcript)
    if session.iterations:
        messages.append(AgentMessage("user", reminder_message(session.goal)))
    return messages


def render_feedback(result: ExecutionResult, warnings: Optional[list[str]] = None) -> str:
    parts = []
    if warnings:
        parts.extend(warnings)
    parts.append(f"exit: {result.exit_description()}")
    parts.append(f"records: {len(result.records)}")
    if result.saved_files:
        parts.append("saved: " + ", ".join(result.saved_files))
    parts.append("stdout:\n" + result.stdout)
    parts.append("stderr:\n" + result.stderr)
    return "\n".join(parts)


class ApprovalGate:
    """Mailbox handing operator decisions to a parked session thread."""

    def __init__(self):
        self._lock = threading.Lock()
        self._decided = threading.Condition(self._lock)
        self._waiting = False
        self._decision: Optional[tuple[bool, str, Optional[str]]] = None

    def wait_decision(self) -> tuple[bool, str, Optional[str]]:
        with self._decided:
            self._waiting = True
            self._decision = None
            self._decided.notify_all()
            while self._decision is None:
                self._decided.wait()
            self._waiting = False
            return self._decision

    def resolve(self, approved: bool, by: str, reason: Optional[str] = None) -> None:
        with self._decided:
            if not self._waiting or self._decision is not None:
                raise ApprovalConflict("not awaiting approval")
            self._decision = (approved, by, reason)
            self._decided.notify_all()

    @property
    def waiting(self) -> bool:
        with self._lock:
            return self._waiting and self._decision is None


def make_sandbox(rack, limits: Optional[Limits] = None,
                 workdir: str = ".") -> Callable[[str], ExecutionResult]:
    """Parse-and-execute closure over the rack; parse faults become results."""
    bounds = limits if limits is not None else Limits()

    def sandbox(code: str) -> ExecutionResult:
        try:
            program = parse_program(code)
        except LabScriptParseError as err:
            return ExecutionResult(
                exit="ScriptError",
                stderr=f"line {err.line}: parse error: {err.reason}\n",
                error_line=err.line,
                error_message=f"parse error: {err.reason}",
            )
        return execute(program, rack.resources(), limits=bounds,
                       workdir=workdir, clock=rack.clock)

    return sandbox


class AgentRunner:
    """Drives one session; step() is one full loop turn."""

    def __init__(
        self,
        session: AgentSession,
        llm,
        sandbox: Callable[[str], ExecutionResult],
        session_dir: str,
        predicate=None,
        model: str = DEFAULT_MODEL,
        clock=None,
        event_log=None,
        rack_snapshot: Optional[dict] = None,
    ):
        self.session = session
        self.llm = llm
        self.sandbox = sandbox
        self.session_dir = session_dir
        self.predicate = predicate if predicate is not None else RecordsAtLeast(1)
        self.model = model
        self.clock = clock if clock is not None else VirtualClock()
        self.events = event_log
        self.rack_snapshot = rack_snapshot
        self.gate = ApprovalGate()
        os.makedirs(session_dir, exist_ok=True)

    # ------------------------- operator surface -------------------------

    def approve(self, by: str = "operator") -> None:
        if self.session.state != AWAITING_APPROVAL:
            raise ApprovalConflict("not awaiting approval")
        self.gate.resolve(True, by)

    def reject(self, by: str = "operator", reason: str = "") -> None:
        if self.session.state != AWAITING_APPROVAL:
            raise ApprovalConflict("not awaiting approval")
        self.gate.resolve(False, by, reason)

    def mark_success(self) -> None:
        for predicate in self._walk_predicates(self.predicate):
            if isinstance(predicate, AlwaysManual):
                predicate.marked = True

    @staticmethod
    def _walk_predicates(predicate):
        yield predicate
        if isinstance(predicate, And):
            for part in predicate.parts:
                yield from AgentRunner._walk_predicates(part)

    # ----------------------------- the loop -----------------------------

    def _emit(self, kind: str, payload: dict) -> None:
        if self.events is not None:
            self.events.append(kind, payload)

    def _artifact_file(self, index: int) -> str:
        return os.path.join(self.session_dir, ARTIFACT_TEMPLATE.format(index=index))

    def _append_feedback(self, text: str) -> None:
        self.session.transcript.append(AgentMessage("user", text))
        self._emit(ev.FEEDBACK, {"content": text})

    def _finish(self, state: str, reason: Optional[str] = None) -> None:
        self.session.state = state
        self.session.fail_reason = reason
        self._emit(ev.SESSION_TERMINAL, {"state": state, "reason": reason})
        self.persist()

    def step(self) -> AgentSession:
        session = self.session
        if session.state != RUNNING:
            return session
        index = len(session.iterations) + 1
        self._emit(ev.ITERATION_STARTED, {"index": index})

        request = ChatRequest(
            model=self.model,
            messages=[m.to_dict() for m in compose_messages(session)],
        )
        try:
            reply = self.llm.complete(request)
        except LlmError:
            try:
                reply = self.llm.complete(request)  # one retry
            except LlmError:
                self._finish(FAILED, "llm unavailable")
                return session
        session.transcript.append(AgentMessage("assistant", reply))

        parsed = parse_reply(reply)
        iteration = Iteration(
            index=index,
            proposed_code=parsed.code or "",
            artifact_path=ARTIFACT_TEMPLATE.format(index=index),
            warnings=list(parsed.warnings),
        )
        session.iterations.append(iteration)
        with open(self._artifact_file(index), "w", encoding="utf-8") as handle:
            handle.write(iteration.proposed_code)
        self._emit(ev.CODE_PROPOSED, {"index": index, "code": iteration.proposed_code,
                                      "done_flag": parsed.done})

        if parsed.code is None:
            self._append_feedback(
                "No labscript code block found in your reply. Reply with exactly "
                "one fenced code block labeled labscript."
            )
            self._after_iteration(done_flag=False, executed=None)
            return session

        if session.mode == MODE_STEP:
            session.state = AWAITING_APPROVAL
            self.persist()
            self._emit(ev.AWAITING_APPROVAL, {"index": index})
            approved, by, reason = self.gate.wait_decision()
            session.state = RUNNING
            if not approved:
                iteration.approval = {
                    "status": "rejected", "by": by, "reason": reason or "",
                    "at": self.clock.now(),
                }
                self._append_feedback(f"Operator rejected: {reason or ''}")
                self._after_iteration(done_flag=False, executed=None)
                return session
            iteration.approval = {"status": "approved", "by": by, "at": self.clock.now()}

        result = self.sandbox(iteration.proposed_code)
        iteration.exec = result
        self._emit(ev.EXECUTED, {"index": index, "exit": result.exit_description()})
        self._append_feedback(render_feedback(result, iteration.warnings))
        self._after_iteration(done_flag=parsed.done, executed=result)
        return session

    def _after_iteration(self, done_flag: bool, executed: Optional[ExecutionResult]) -> None:
        session = self.session
        if done_flag and self.predicate.evaluate(executed, self.session_dir):
            self._finish(SUCCEEDED)
            return
        if len(session.iterations) >= session.max_iters:
            self._finish(FAILED, "max iterations")
            return
        self.persist()

    def run(self) -> AgentSession:
        while self.session.state == RUNNING:
            self.step()
        return self.session

    # ---------------------------- persistence ----------------------------

    def persist(self) -> None:
        payload = self.session.to_dict()
        payload["model"] = self.model
        payload["predicate"] = self.predicate.to_dict()
        if self.rack_snapshot is not None:
            payload["rack"] = self.rack_snapshot
        path = os.path.join(self.session_dir, "session.json")
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")


def load_session_file(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    if data.get("version") != SESSION_FILE_VERSION:
        raise ValueError(f"unsupported session file version: {data.get('version')!r}")
    return data
