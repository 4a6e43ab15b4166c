"""Injectable simulation clocks.

Every time-dependent component (stage kinematics, scan settling, script
budgets) takes a clock object instead of touching ``time`` directly, so the
whole rack can run against a manually advanced virtual clock in tests and
against the wall clock in live demos.
"""

from __future__ import annotations

import threading
import time


class VirtualClock:
    """Manually advanced clock; ``sleep`` advances time instantly."""

    def __init__(self, start: float = 0.0):
        self._now = float(start)
        self._lock = threading.Lock()

    def now(self) -> float:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> None:
        if seconds < 0:
            raise ValueError("cannot advance a clock backwards")
        with self._lock:
            self._now += seconds

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            self.advance(seconds)


class WallClock:
    """Real time, monotonic."""

    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        if seconds > 0:
            time.sleep(seconds)
