import math

from hypothesis import given, strategies as st

from autolab.clock import VirtualClock
from autolab.stage import (
    DEFAULT_VELOCITY,
    IDLE,
    MOVING,
    MotionState,
    StagePose,
    VirtualStage,
)


def make_stage(velocity=1000.0):
    clock = VirtualClock()
    return VirtualStage(clock=clock, velocity=velocity), clock


# --------------------------- line protocol ---------------------------

def test_move_then_advance_reaches_target():
    stage, clock = make_stage(velocity=1000.0)
    assert stage.handle_command("MOVE 1000 0") == "OK"
    assert stage.handle_command("STATUS?") == MOVING
    clock.advance(1.0)
    assert stage.handle_command("STATUS?") == IDLE
    assert stage.handle_command("POS?") == "1000 0"


def test_move_beyond_limits_rejected_state_unchanged():
    stage, _ = make_stage()
    assert stage.handle_command("MOVE 80000 0") == "ERR 2 RANGE"
    assert stage.handle_command("POS?") == "0 0"
    assert stage.handle_command("STATUS?") == IDLE


def test_home_is_move_to_origin_with_euclidean_path():
    # Path length oracle: hypot(3000, 4000) = 5000 um -> 5 s at 1000 um/s.
    stage, clock = make_stage(velocity=1000.0)
    stage.handle_command("MOVE 3000 4000")
    clock.advance(10.0)
    assert stage.handle_command("POS?") == "3000 4000"

    assert math.hypot(3000, 4000) == 5000.0
    assert stage.handle_command("HOME") == "OK"
    clock.advance(4.5)
    assert stage.handle_command("STATUS?") == MOVING
    clock.advance(0.5)  # exactly 5.0 s total: path length / velocity
    assert stage.handle_command("STATUS?") == IDLE
    assert stage.handle_command("POS?") == "0 0"


def test_unknown_verb_and_malformed_args():
    stage, _ = make_stage()
    assert stage.handle_command("JUMP 1 2") == "ERR 1 SYNTAX"
    assert stage.handle_command("MOVE 1") == "ERR 1 SYNTAX"
    assert stage.handle_command("MOVE a b") == "ERR 1 SYNTAX"
    assert stage.handle_command("MOVE nan 0") == "ERR 2 RANGE"
    assert stage.handle_command("MOVE -1 0") == "ERR 2 RANGE"


def test_limits_query():
    stage, _ = make_stage()
    assert stage.handle_command("LIMITS?") == "0 0 75000 75000"


def test_empty_line_ignored():
    stage, _ = make_stage()
    assert stage.handle_command("   ") is None
    assert stage.handle_line("") == []


def test_move_to_current_position_is_idle_immediately():
    stage, clock = make_stage()
    assert stage.handle_command("MOVE 0 0") == "OK"
    assert stage.handle_command("STATUS?") == IDLE
    clock.advance(0.0)
    assert stage.handle_command("STATUS?") == IDLE


def test_retarget_mid_move_starts_from_current():
    stage, clock = make_stage(velocity=1000.0)
    stage.handle_command("MOVE 1000 0")
    clock.advance(0.5)
    assert stage.handle_command("POS?") == "500 0"
    stage.handle_command("MOVE 500 400")
    clock.advance(0.4)
    assert stage.handle_command("POS?") == "500 400"


# --------------------------- pure kinematics ---------------------------

def test_advance_partial():
    m = MotionState(start=StagePose(0, 0), target=StagePose(100, 0), velocity=1000.0)
    m.advance(0.05)
    assert m.remaining == 50.0
    assert m.status == MOVING


def test_advance_past_target_no_overshoot():
    m = MotionState(start=StagePose(0, 0), target=StagePose(100, 0), velocity=1000.0)
    m.advance(0.2)
    assert m.current == StagePose(100, 0)
    assert m.status == IDLE


def test_advance_zero_is_identity():
    m = MotionState(start=StagePose(0, 0), target=StagePose(100, 0), velocity=1000.0)
    before = m.current
    m.advance(0.0)
    assert m.current == before
    assert m.status == MOVING


@given(
    dts=st.lists(st.floats(0, 10, allow_nan=False), min_size=1, max_size=20),
    tx=st.floats(0, 75000, allow_nan=False),
    ty=st.floats(0, 75000, allow_nan=False),
)
def test_never_overshoots_and_stays_on_segment(dts, tx, ty):
    m = MotionState(start=StagePose(10.0, 20.0), target=StagePose(tx, ty), velocity=DEFAULT_VELOCITY)
    length = m.path_length
    for dt in dts:
        m.advance(dt)
        pose = m.current
        # within the closed segment [start, target]
        assert m.start.distance_to(pose) <= length + 1e-9
        assert pose.distance_to(m.target) <= length + 1e-9
        assert 0 <= pose.x <= 75000 and 0 <= pose.y <= 75000
    if sum(dts) * m.velocity >= length:
        assert m.status == IDLE
        assert m.current == m.target


# Dyadic multiples of 2^-10: float addition on this grid is exact, so
# advance(dt1); advance(dt2) must equal advance(dt1+dt2) bit for bit.
dyadic = st.integers(0, 1 << 20).map(lambda n: n / 1024.0)


@given(dt1=dyadic, dt2=dyadic, pre=dyadic)
def test_clock_additivity_exact_on_dyadic_grid(dt1, dt2, pre):
    def fresh():
        m = MotionState(start=StagePose(0, 0), target=StagePose(61234.5, 43210.9), velocity=17.3)
        m.advance(pre)
        return m

    a = fresh()
    a.advance(dt1)
    a.advance(dt2)
    b = fresh()
    b.advance(dt1 + dt2)
    assert a.elapsed == b.elapsed
    assert a.current == b.current
    assert a.status == b.status


@given(
    dt1=st.floats(0, 100, allow_nan=False),
    dt2=st.floats(0, 100, allow_nan=False),
)
def test_clock_additivity_arbitrary_floats(dt1, dt2):
    # Arbitrary floats: dt1+dt2 itself rounds, so compare to float resolution.
    a = MotionState(start=StagePose(0, 0), target=StagePose(61234.5, 43210.9), velocity=17.3)
    a.advance(dt1)
    a.advance(dt2)
    b = MotionState(start=StagePose(0, 0), target=StagePose(61234.5, 43210.9), velocity=17.3)
    b.advance(dt1 + dt2)
    assert a.current.distance_to(b.current) < 1e-6
