import pytest
from hypothesis import given, strategies as st

from autolab.clock import VirtualClock
from autolab.formatting import sci6
from autolab.rack import KIND_SMU, KIND_STAGE, RackConfig, rack_up
from autolab.scan import (
    Frame,
    PlanError,
    ScanPlan,
    export_csv,
    export_pgm,
    plan_snake,
    run_scan,
)
from autolab.scene import Scene, load_scene_pgm, make_logo_scene
from autolab.scpi import Photoconductor


def snake_oracle(nx, ny):
    """Independent enumeration: sort grid cells by (row, direction-adjusted col)."""
    cells = [(col, row) for row in range(ny) for col in range(nx)]
    return sorted(cells, key=lambda cr: (cr[1], cr[0] if cr[1] % 2 == 0 else -cr[0]))


# ------------------------------ planning ------------------------------

def test_snake_2x2():
    order = [(c, r) for c, r, _ in plan_snake(ScanPlan(nx=2, ny=2))]
    assert order == [(0, 0), (1, 0), (1, 1), (0, 1)]


def test_snake_3x2_matches_enumeration_oracle():
    order = [(c, r) for c, r, _ in plan_snake(ScanPlan(nx=3, ny=2))]
    assert order == [(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (0, 1)]
    assert order == snake_oracle(3, 2)


def test_snake_full_scale_200x120():
    order = plan_snake(ScanPlan(nx=200, ny=120))
    assert len(order) == 24000
    col, row, pose = order[200]
    assert (col, row) == (199, 1)
    assert (pose.x, pose.y) == (199 * 100.0, 1 * 100.0)


def test_snake_footprint_error_names_axis():
    with pytest.raises(PlanError) as err:
        plan_snake(ScanPlan(nx=800, ny=2, pitch_x=100.0))
    assert err.value.axis == "x"
    with pytest.raises(PlanError) as err:
        plan_snake(ScanPlan(nx=2, ny=800, pitch_y=100.0))
    assert err.value.axis == "y"


@given(nx=st.integers(1, 40), ny=st.integers(1, 40))
def test_snake_visits_every_cell_once_and_steps_one_pitch(nx, ny):
    plan = ScanPlan(nx=nx, ny=ny, pitch_x=10.0, pitch_y=20.0)
    order = plan_snake(plan)
    assert len(order) == nx * ny
    assert {(c, r) for c, r, _ in order} == {(c, r) for r in range(ny) for c in range(nx)}
    assert [(c, r) for c, r, _ in order] == snake_oracle(nx, ny)
    for (c1, r1, p1), (c2, r2, p2) in zip(order, order[1:]):
        dx, dy = abs(p2.x - p1.x), abs(p2.y - p1.y)
        assert (dx, dy) in ((plan.pitch_x, 0.0), (0.0, plan.pitch_y))


# ------------------------------- scene --------------------------------

def test_scene_sampling_nearest_neighbor_and_clamping():
    scene = Scene(pixels=[[0.0, 2.0], [1.0, -3.0]], scale_x=100.0, scale_y=100.0)
    assert scene.sample(0, 0) == 0.0
    assert scene.sample(100, 0) == 1.0  # clamped from 2.0
    assert scene.sample(0, 100) == 1.0
    assert scene.sample(100, 100) == 0.0  # clamped from -3.0
    assert scene.sample(49.9, 0) == 0.0
    assert scene.sample(50.1, 0) == 1.0
    assert scene.sample(-500, 0) == 0.0  # outside: dark


def test_scene_pgm_round_trip(tmp_path):
    frame = Frame(nx=2, ny=2, data=[0.0, 1e-3, 2e-3, 3e-3],
                  meta={"plan": ScanPlan(nx=2, ny=2).__dict__})
    path = tmp_path / "scene.pgm"
    path.write_text(export_pgm(frame))
    scene = load_scene_pgm(str(path))
    assert (scene.width, scene.height) == (2, 2)
    # frame row 0 (bottom) survives the top-first file layout
    assert scene.pixels[0] == [0.0, 1 / 3]
    assert scene.pixels[1] == [2 / 3, 1.0]


def test_logo_scene_is_high_contrast_and_deterministic():
    a = make_logo_scene(32, 32)
    b = make_logo_scene(32, 32)
    assert a.pixels == b.pixels
    flat = [v for row in a.pixels for v in row]
    assert set(flat) == {0.0, 1.0}
    assert 0.2 < sum(flat) / len(flat) < 0.8


# ----------------------------- acquisition -----------------------------

def photoconductor_rack(scene, **kw):
    return RackConfig(
        smu_port=0, stage_port=0, clock=VirtualClock(), scene=scene,
        device=Photoconductor(r_dark=10000.0, sensitivity_k=9.0), **kw,
    )


def acquire(plan, config, **kw):
    with rack_up(config) as rack:
        with rack.connect(KIND_SMU) as smu, rack.connect(KIND_STAGE) as stage:
            return run_scan(plan, smu, stage, rack, **kw)


def pixelwise_oracle(plan, scene, r_dark=10000.0, k=9.0, ilim=0.1):
    """Direct scene -> irradiance -> R_eff -> I composition, no protocol."""
    data = [0.0] * (plan.nx * plan.ny)
    for col, row, pose in plan_snake(plan):
        e = scene.sample(pose.x, pose.y)
        r_eff = r_dark / (1.0 + k * e)
        i = max(-ilim, min(ilim, plan.bias_v / r_eff))
        data[row * plan.nx + col] = float(sci6(i))
    return data


def test_uniform_scene_all_pixels_equal():
    scene = Scene(pixels=[[1.0] * 4 for _ in range(4)], scale_x=100.0, scale_y=100.0)
    frame = acquire(ScanPlan(nx=3, ny=3), photoconductor_rack(scene))
    assert frame.complete
    assert len(set(frame.data)) == 1
    assert frame.data[0] == 1e-3  # 1 V over 10k/(1+9) = 1 kOhm


def test_dark_scene_reads_dark_current_everywhere():
    scene = Scene(pixels=[[0.0] * 4 for _ in range(4)], scale_x=100.0, scale_y=100.0)
    frame = acquire(ScanPlan(nx=2, ny=2), photoconductor_rack(scene))
    assert frame.data == [1e-4] * 4  # bias / r_dark


def test_checkerboard_matches_photoconductor_formula():
    scene = Scene(pixels=[[0.0, 1.0], [1.0, 0.0]], scale_x=100.0, scale_y=100.0)
    plan = ScanPlan(nx=2, ny=2)
    frame = acquire(plan, photoconductor_rack(scene))
    assert frame.data == pixelwise_oracle(plan, scene)
    # hand values: dark 1.0/10000 = 1e-4, lit 1.0/1000 = 1e-3
    assert frame.data == [1e-4, 1e-3, 1e-3, 1e-4]


def test_scan_oracle_equivalence_bit_identical_after_formatting():
    scene = make_logo_scene(8, 8)
    plan = ScanPlan(nx=8, ny=8)
    frame = acquire(plan, photoconductor_rack(scene))
    assert frame.complete
    assert [sci6(v) for v in frame.data] == [sci6(v) for v in pixelwise_oracle(plan, scene)]


def test_row_major_storage_independent_of_traversal():
    # Pixel (col,row) must land at data[row*nx+col] even on odd (reversed) rows.
    scene = Scene(
        pixels=[[0.0, 0.25, 0.5], [0.6, 0.8, 1.0]], scale_x=100.0, scale_y=100.0
    )
    plan = ScanPlan(nx=3, ny=2)
    frame = acquire(plan, photoconductor_rack(scene))
    oracle = pixelwise_oracle(plan, scene)
    for row in range(2):
        for col in range(3):
            assert frame.data[row * 3 + col] == oracle[row * 3 + col]


def test_pixel_events_arrive_in_snake_order():
    scene = make_logo_scene(4, 4)
    seen = []
    plan = ScanPlan(nx=2, ny=2)
    acquire(plan, photoconductor_rack(scene), on_pixel=lambda c, r, v: seen.append((c, r)))
    assert seen == [(0, 0), (1, 0), (1, 1), (0, 1)]


def test_scan_aborts_incomplete_on_stage_error():
    # Footprint fits the plan check only if limits allow; shrink stage travel
    # below the second row so MOVE fails mid-scan.
    scene = make_logo_scene(4, 4)
    config = photoconductor_rack(scene, y_max=50.0)
    plan = ScanPlan(nx=2, ny=2)
    with rack_up(config) as rack:
        with rack.connect(KIND_SMU) as smu, rack.connect(KIND_STAGE) as stage:
            with pytest.raises(PlanError):
                run_scan(plan, smu, stage, rack)


def test_scan_partial_frame_flagged_incomplete():
    scene = make_logo_scene(4, 4)

    class FlakyStage:
        def __init__(self, inner):
            self.inner = inner
            self.moves = 0

        def query(self, line, timeout=None):
            if line.startswith("MOVE"):
                self.moves += 1
                if self.moves == 3:
                    return "ERR 2 RANGE"
            return self.inner.query(line, timeout)

        def send(self, line):
            self.inner.send(line)

    with rack_up(photoconductor_rack(scene)) as rack:
        with rack.connect(KIND_SMU) as smu, rack.connect(KIND_STAGE) as stage:
            frame = run_scan(ScanPlan(nx=2, ny=2), smu, FlakyStage(stage), rack)
    assert not frame.complete
    assert frame.meta["pixels_measured"] == 2
    assert len(frame.data) == 4
    assert "stage error" in frame.meta["abort_reason"]


# ------------------------------ exporters ------------------------------

def make_frame(nx, ny, data):
    return Frame(nx=nx, ny=ny, data=data, meta={"plan": ScanPlan(nx=nx, ny=ny).__dict__})


def test_export_csv_2x2():
    frame = make_frame(2, 2, [1e-3, 2e-3, 3e-3, 4e-3])
    text = export_csv(frame)
    lines = text.splitlines()
    assert len(lines) == 5
    assert lines[0] == "col,row,x_um,y_um,current_A"
    assert lines[1] == "0,0,0.00000E+00,0.00000E+00,1.00000E-03"
    # acquisition (snake) order: row 1 traverses right to left
    assert lines[3] == "1,1,1.00000E+02,1.00000E+02,4.00000E-03"
    assert lines[4] == "0,1,0.00000E+00,1.00000E+02,3.00000E-03"


def test_export_csv_full_scale_line_count():
    frame = make_frame(200, 120, [0.0] * 24000)
    assert len(export_csv(frame).splitlines()) == 24001


def test_empty_frame_forbidden():
    with pytest.raises(ValueError):
        Frame(nx=0, ny=0, data=[], meta={})
    with pytest.raises(ValueError):
        ScanPlan(nx=0, ny=1)


def test_export_pgm_values_and_row_flip():
    # Hand-computed: (v-min)/(max-min)*65535 -> [0, 21845, 43690, 65535],
    # then frame row 1 is written first (image y-axis points up).
    frame = make_frame(2, 2, [1e-3, 2e-3, 3e-3, 4e-3])
    text = export_pgm(frame)
    lines = text.splitlines()
    assert lines[:3] == ["P2", "2 2", "65535"]
    assert lines[3] == "43690 65535"
    assert lines[4] == "0 21845"


def test_export_pgm_constant_frame_all_zero():
    frame = make_frame(2, 2, [5e-3] * 4)
    assert export_pgm(frame).splitlines()[3:] == ["0 0", "0 0"]


def test_export_pgm_single_pixel():
    frame = make_frame(1, 1, [1.0])
    assert export_pgm(frame).splitlines() == ["P2", "1 1", "65535", "0"]


def test_frame_rejects_nonfinite_values():
    with pytest.raises(ValueError):
        make_frame(1, 2, [0.0, float("nan")])
