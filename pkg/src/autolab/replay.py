"""Re-run a persisted session and verify it reproduces byte-identically.

The recorded assistant replies become a scripted stub, the recorded rack
snapshot is rebuilt on the same ports with a virtual clock, and recorded
approval decisions are re-applied. Any divergence in transcript or iteration
artifacts is reported.
"""

from __future__ import annotations

import os
import threading
import time
from typing import Optional

from .agent import (
    AWAITING_APPROVAL,
    AgentRunner,
    AgentSession,
    make_sandbox,
    parse_predicate,
    start_session,
)
from .labscript import Limits
from .llm import ScriptedStub
from .rack import Rack, config_from_snapshot


class ReplayError(RuntimeError):
    pass


def _approval_driver(runner: AgentRunner, recorded_iterations: list[dict]):
    """Re-apply recorded operator decisions whenever the session parks."""

    def drive():
        while runner.session.state not in ("Succeeded", "Failed"):
            if runner.session.state == AWAITING_APPROVAL and runner.gate.waiting:
                index = len(runner.session.iterations)
                try:
                    approval = recorded_iterations[index - 1].get("approval", {})
                except IndexError:
                    approval = {}
                if approval.get("status") == "rejected":
                    runner.reject(by=approval.get("by", "operator"),
                                  reason=approval.get("reason", ""))
                else:
                    runner.approve(by=approval.get("by", "operator"))
            time.sleep(0.001)

    thread = threading.Thread(target=drive, daemon=True, name="replay-approvals")
    thread.start()
    return thread


def replay_session(session_data: dict, out_dir: str,
                   limits: Optional[Limits] = None) -> tuple[AgentSession, list[str]]:
    """Returns the replayed session and a list of divergences (empty = exact)."""
    snapshot = session_data.get("rack")
    if not snapshot:
        raise ReplayError("session file carries no rack snapshot; cannot replay")
    recorded_transcript = session_data["transcript"]
    replies = [m["content"] for m in recorded_transcript if m["role"] == "assistant"]
    system_prompt = next(
        (m["content"] for m in recorded_transcript if m["role"] == "system"), None
    )
    stub = ScriptedStub(replies=replies)

    config = config_from_snapshot(snapshot, clock="virtual")
    rack = Rack(config)
    try:
        rack.start()
    except Exception as exc:
        raise ReplayError(f"cannot rebuild rack for replay: {exc}") from exc

    try:
        session = start_session(
            goal=session_data["goal"],
            resources=rack.resources(),
            mode=session_data.get("mode", "AUTO"),
            max_iters=session_data.get("max_iters", 8),
            system_prompt=system_prompt,
        )
        os.makedirs(out_dir, exist_ok=True)
        runner = AgentRunner(
            session=session,
            llm=stub,
            sandbox=make_sandbox(rack, limits=limits, workdir=out_dir),
            session_dir=out_dir,
            predicate=parse_predicate(session_data.get("predicate", {"records_at_least": 1})),
            model=session_data.get("model", "replay"),
            clock=rack.clock,
            rack_snapshot=rack.config_snapshot(),
        )
        if session.mode == "STEP":
            _approval_driver(runner, session_data["iterations"])
        runner.run()
    finally:
        rack.stop()

    return session, diff_sessions(session_data, session, out_dir)


def diff_sessions(recorded: dict, replayed: AgentSession, out_dir: str) -> list[str]:
    problems = []
    old = [(m["role"], m["content"]) for m in recorded["transcript"]]
    new = [(m.role, m.content) for m in replayed.transcript]
    if len(old) != len(new):
        problems.append(f"transcript length {len(new)} != recorded {len(old)}")
    for i, (a, b) in enumerate(zip(old, new)):
        if a != b:
            problems.append(f"transcript message {i} differs ({a[0]!r} vs {b[0]!r})")
    if recorded["state"] != replayed.state:
        problems.append(f"state {replayed.state} != recorded {recorded['state']}")
    for recorded_iter in recorded["iterations"]:
        name = recorded_iter["artifact_path"]
        path = os.path.join(out_dir, name)
        if not os.path.exists(path):
            problems.append(f"artifact {name} missing after replay")
            continue
        with open(path, "r", encoding="utf-8") as handle:
            if handle.read() != recorded_iter["proposed_code"]:
                problems.append(f"artifact {name} differs from recorded code")
    return problems
