"""Snake-raster scan planner, acquisition loop, and exporters.

Rows are scanned bottom to top; even rows traverse columns ascending, odd
rows descending, so consecutive poses always differ by a single pitch.
Frame storage is row-major ``data[row*nx + col]`` regardless of traversal
direction.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .formatting import fmt_num, fmt_um, sci6
from .stage import IDLE, MOVING, StagePose, X_MAX_DEFAULT, Y_MAX_DEFAULT


class PlanError(ValueError):
    def __init__(self, axis: str, message: str):
        super().__init__(message)
        self.axis = axis


@dataclass
class ScanPlan:
    nx: int
    ny: int
    pitch_x: float = 100.0  # um
    pitch_y: float = 100.0
    origin_x: float = 0.0
    origin_y: float = 0.0
    settle_ms: float = 10.0
    bias_v: float = 1.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("nx and ny must be >= 1")
        if self.pitch_x <= 0 or self.pitch_y <= 0:
            raise ValueError("pitch must be > 0")
        if self.settle_ms < 0:
            raise ValueError("settle must be >= 0")


@dataclass
class Frame:
    nx: int
    ny: int
    data: list[float]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("frame must hold at least one pixel")
        if len(self.data) != self.nx * self.ny:
            raise ValueError("frame data must hold exactly nx*ny values")
        if any(not math.isfinite(v) for v in self.data):
            raise ValueError("frame values must be finite")

    @property
    def complete(self) -> bool:
        return bool(self.meta.get("complete", True))

    def plan(self) -> ScanPlan:
        return ScanPlan(**self.meta["plan"])


def plan_snake(plan: ScanPlan, x_max: float = X_MAX_DEFAULT,
               y_max: float = Y_MAX_DEFAULT) -> list[tuple[int, int, StagePose]]:
    """Acquisition order: (col, row, pose) triples."""
    far_x = plan.origin_x + (plan.nx - 1) * plan.pitch_x
    far_y = plan.origin_y + (plan.ny - 1) * plan.pitch_y
    if plan.origin_x < 0 or far_x > x_max:
        raise PlanError("x", f"scan footprint exceeds x travel: {far_x} > {x_max}")
    if plan.origin_y < 0 or far_y > y_max:
        raise PlanError("y", f"scan footprint exceeds y travel: {far_y} > {y_max}")

    order = []
    for row in range(plan.ny):
        cols = range(plan.nx) if row % 2 == 0 else range(plan.nx - 1, -1, -1)
        for col in cols:
            pose = StagePose(
                plan.origin_x + col * plan.pitch_x,
                plan.origin_y + row * plan.pitch_y,
            )
            order.append((col, row, pose))
    return order


class ScanAborted(RuntimeError):
    pass


def run_scan(
    plan: ScanPlan,
    smu_session,
    stage_session,
    rack,
    on_pixel: Optional[Callable[[int, int, float], None]] = None,
    poll_ms: float = 5.0,
) -> Frame:
    """Acquire one frame: per pixel MOVE -> wait IDLE -> settle -> :READ?.

    Bias is applied once before the first pixel, output switched off after
    the last. Instrument errors abort and return a partial frame flagged
    incomplete (unmeasured pixels stay 0.0).
    """
    clock = rack.clock
    limits_reply = stage_session.query("LIMITS?")
    try:
        _, _, x_max, y_max = (float(f) for f in limits_reply.split())
    except (AttributeError, ValueError):
        raise ScanAborted(f"stage did not report limits: {limits_reply!r}")
    order = plan_snake(plan, x_max=x_max, y_max=y_max)

    data = [0.0] * (plan.nx * plan.ny)
    measured = 0
    abort_reason = None

    idn = smu_session.query("*IDN?")
    smu_session.send(f":SOUR:VOLT {fmt_num(plan.bias_v)}")
    smu_session.send(":OUTP ON")
    first_err = smu_session.query(":SYST:ERR?")
    if first_err is None or not first_err.startswith("0,"):
        abort_reason = f"SMU setup error: {first_err}"
    else:
        for col, row, pose in order:
            reply = stage_session.query(f"MOVE {fmt_um(pose.x)} {fmt_um(pose.y)}")
            if reply != "OK":
                abort_reason = f"stage error at ({col},{row}): {reply}"
                break
            while True:
                status = stage_session.query("STATUS?")
                if status == IDLE:
                    break
                if status != MOVING:
                    abort_reason = f"stage error at ({col},{row}): {status}"
                    break
                clock.sleep(poll_ms / 1000.0)
            if abort_reason:
                break
            clock.sleep(plan.settle_ms / 1000.0)
            reading = smu_session.query(":READ?")
            try:
                value = float(reading)
            except (TypeError, ValueError):
                abort_reason = f"SMU error at ({col},{row}): {reading!r}"
                break
            data[row * plan.nx + col] = value
            measured += 1
            if on_pixel is not None:
                on_pixel(col, row, value)
    smu_session.send(":OUTP OFF")

    meta = {
        "plan": asdict(plan),
        "complete": abort_reason is None,
        "pixels_measured": measured,
        "acquired_at": clock.now(),
        "instrument": idn,
        "resources": [r.resource_id for r in rack.resources()],
    }
    if abort_reason:
        meta["abort_reason"] = abort_reason
    return Frame(nx=plan.nx, ny=plan.ny, data=data, meta=meta)


def export_csv(frame: Frame) -> str:
    """One line per pixel in acquisition order; 6-digit scientific notation."""
    plan = frame.plan()
    lines = ["col,row,x_um,y_um,current_A"]
    for col, row, pose in plan_snake(plan):
        value = frame.data[row * frame.nx + col]
        lines.append(f"{col},{row},{sci6(pose.x)},{sci6(pose.y)},{sci6(value)}")
    return "\n".join(lines) + "\n"


def export_pgm(frame: Frame) -> str:
    """P2 graymap, min-max normalized to 0..65535, image y-axis pointing up
    (file row 0 is frame row ny-1). A constant frame renders all zeros."""
    lo = min(frame.data)
    hi = max(frame.data)
    span = hi - lo
    if span == 0.0:
        levels = [0] * len(frame.data)
    else:
        levels = [round((v - lo) / span * 65535) for v in frame.data]
    lines = ["P2", f"{frame.nx} {frame.ny}", "65535"]
    for row in range(frame.ny - 1, -1, -1):
        lines.append(" ".join(str(levels[row * frame.nx + col]) for col in range(frame.nx)))
    return "\n".join(lines) + "\n"
