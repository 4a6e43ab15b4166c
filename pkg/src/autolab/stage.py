"""Virtual XY stage speaking a small line protocol.

Straight-line constant-velocity kinematics with travel limits; position is a
pure function of elapsed segment time, so the same state machine runs under a
wall clock or a manually advanced virtual clock.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .clock import WallClock
from .formatting import fmt_um

X_MAX_DEFAULT = 75000.0  # um, 8MTF-75-class travel
Y_MAX_DEFAULT = 75000.0
DEFAULT_VELOCITY = 5000.0  # um/s

IDLE = "IDLE"
MOVING = "MOVING"


@dataclass(frozen=True)
class StagePose:
    x: float
    y: float

    def distance_to(self, other: "StagePose") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)


@dataclass
class MotionState:
    """One motion segment; ``current`` and ``status`` derive from elapsed time.

    Deriving the pose from accumulated segment time (rather than stepping the
    position) is what keeps advance() additive and overshoot-free.
    """

    start: StagePose = StagePose(0.0, 0.0)
    target: StagePose = StagePose(0.0, 0.0)
    velocity: float = DEFAULT_VELOCITY
    elapsed: float = 0.0

    def __post_init__(self):
        if self.velocity <= 0:
            raise ValueError("velocity must be > 0")

    @property
    def path_length(self) -> float:
        return self.start.distance_to(self.target)

    def _progress(self) -> float:
        length = self.path_length
        if length == 0.0:
            return 1.0
        return min(1.0, self.velocity * self.elapsed / length)

    @property
    def current(self) -> StagePose:
        f = self._progress()
        if f >= 1.0:
            return self.target
        return StagePose(
            self.start.x + f * (self.target.x - self.start.x),
            self.start.y + f * (self.target.y - self.start.y),
        )

    @property
    def status(self) -> str:
        return IDLE if self._progress() >= 1.0 else MOVING

    @property
    def remaining(self) -> float:
        return self.current.distance_to(self.target)

    def advance(self, dt: float) -> None:
        if dt < 0:
            raise ValueError("dt must be >= 0")
        self.elapsed += dt

    def retarget(self, pose: StagePose) -> None:
        self.start = self.current
        self.target = pose
        self.elapsed = 0.0


class VirtualStage:
    """Protocol-facing stage; syncs kinematics to the injected clock."""

    def __init__(
        self,
        clock=None,
        x_max: float = X_MAX_DEFAULT,
        y_max: float = Y_MAX_DEFAULT,
        velocity: float = DEFAULT_VELOCITY,
    ):
        self.clock = clock if clock is not None else WallClock()
        self.x_max = float(x_max)
        self.y_max = float(y_max)
        self.motion = MotionState(velocity=velocity)
        self._segment_t0 = self.clock.now()

    def _sync(self) -> None:
        self.motion.elapsed = max(0.0, self.clock.now() - self._segment_t0)

    def pose_now(self) -> StagePose:
        self._sync()
        return self.motion.current

    def _in_limits(self, x: float, y: float) -> bool:
        return (
            math.isfinite(x)
            and math.isfinite(y)
            and 0.0 <= x <= self.x_max
            and 0.0 <= y <= self.y_max
        )

    def _start_move(self, x: float, y: float) -> str:
        if not self._in_limits(x, y):
            return "ERR 2 RANGE"
        self.motion.retarget(StagePose(x, y))
        self._segment_t0 = self.clock.now()
        return "OK"

    def handle_command(self, line: str) -> Optional[str]:
        text = line.strip()
        if not text:
            return None
        parts = text.split()
        verb = parts[0].upper()
        self._sync()

        if verb == "MOVE":
            if len(parts) != 3:
                return "ERR 1 SYNTAX"
            try:
                x, y = float(parts[1]), float(parts[2])
            except ValueError:
                return "ERR 1 SYNTAX"
            return self._start_move(x, y)
        if verb == "HOME" and len(parts) == 1:
            return self._start_move(0.0, 0.0)
        if verb == "POS?" and len(parts) == 1:
            pose = self.motion.current
            return f"{fmt_um(pose.x)} {fmt_um(pose.y)}"
        if verb == "STATUS?" and len(parts) == 1:
            return self.motion.status
        if verb == "LIMITS?" and len(parts) == 1:
            return f"0 0 {fmt_um(self.x_max)} {fmt_um(self.y_max)}"
        return "ERR 1 SYNTAX"

    # Transport entry: symmetric with VirtualSmu.handle_line.
    def handle_line(self, line: str) -> list[str]:
        reply = self.handle_command(line)
        return [reply] if reply is not None else []
