"""Per-stream event logs feeding the service's line-delimited JSON streams.

Appends never block the producer; consumers long-poll from a sequence
cursor. Sequence numbers are strictly increasing per stream starting at 1.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional

ITERATION_STARTED = "IterationStarted"
CODE_PROPOSED = "CodeProposed"
AWAITING_APPROVAL = "AwaitingApproval"
EXECUTED = "Executed"
FEEDBACK = "Feedback"
PIXEL_MEASURED = "PixelMeasured"
SCAN_FINISHED = "ScanFinished"
SESSION_TERMINAL = "SessionTerminal"

TERMINAL_KINDS = frozenset({SCAN_FINISHED, SESSION_TERMINAL})


@dataclass(frozen=True)
class Event:
    seq: int
    stream_id: str
    kind: str
    payload: dict

    def to_dict(self) -> dict:
        return {"seq": self.seq, "id": self.stream_id, "kind": self.kind,
                "payload": self.payload}


class EventLog:
    def __init__(self, stream_id: str):
        self.stream_id = stream_id
        self._events: list[Event] = []
        self._terminal = False
        self._lock = threading.Lock()
        self._changed = threading.Condition(self._lock)

    def append(self, kind: str, payload: Optional[dict] = None) -> Event:
        with self._changed:
            event = Event(
                seq=len(self._events) + 1,
                stream_id=self.stream_id,
                kind=kind,
                payload=payload or {},
            )
            self._events.append(event)
            if kind in TERMINAL_KINDS:
                self._terminal = True
            self._changed.notify_all()
            return event

    def events_since(self, after_seq: int = 0) -> list[Event]:
        with self._lock:
            return self._events[after_seq:]

    def wait(self, after_seq: int, timeout: float = 1.0) -> list[Event]:
        """Events after the cursor, blocking up to ``timeout`` for news."""
        with self._changed:
            if len(self._events) <= after_seq and not self._terminal:
                self._changed.wait(timeout)
            return self._events[after_seq:]

    @property
    def terminal(self) -> bool:
        with self._lock:
            return self._terminal
