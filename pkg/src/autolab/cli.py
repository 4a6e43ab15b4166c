"""Operator CLI: rack up, scan run, agent run, serve, replay.

The CLI drives the same core code as the HTTP service; subcommands that
need instruments boot an in-process rack.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import threading
import time

from .agent import (
    AWAITING_APPROVAL,
    SUCCEEDED,
    AgentRunner,
    make_sandbox,
    parse_predicate,
    start_session,
)
from .labscript import Limits
from .llm import DEFAULT_MODEL, ENV_MODEL, HttpBackend, ScriptedStub
from .rack import KIND_SMU, KIND_STAGE, Rack, RackConfig, RackError
from .scan import PlanError, ScanPlan, export_csv, export_pgm, run_scan
from .scene import SceneError, load_scene_pgm, make_logo_scene
from .scpi import Ohmic, OpenCircuit, Photoconductor
from .service import Service, make_server


def positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def nonnegative_float(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def add_rack_options(parser: argparse.ArgumentParser, default_ports=(5025, 5026)) -> None:
    parser.add_argument("--smu-port", type=int, default=default_ports[0])
    parser.add_argument("--stage-port", type=int, default=default_ports[1])
    parser.add_argument("--bind", default="127.0.0.1",
                        help="listen address (default loopback only)")
    parser.add_argument("--scene", default=None,
                        help="P2 PGM reflectance bitmap, or 'logo' for the builtin target")
    parser.add_argument("--scene-scale", type=positive_float, default=100.0,
                        help="scene um per pixel")
    parser.add_argument("--device", choices=["open", "ohmic", "photoconductor"],
                        default="photoconductor")
    parser.add_argument("--resistance", type=positive_float, default=1000.0,
                        help="ohmic device resistance")
    parser.add_argument("--r-dark", type=positive_float, default=10000.0)
    parser.add_argument("--sensitivity", type=nonnegative_float, default=9.0)
    parser.add_argument("--noise", type=nonnegative_float, default=0.0,
                        help="measurement noise sigma in A (default off)")
    parser.add_argument("--seed", type=int, default=0)


def build_rack_config(args, clock, smu_port=None, stage_port=None) -> RackConfig:
    if args.device == "ohmic":
        device = Ohmic(resistance=args.resistance)
    elif args.device == "open":
        device = OpenCircuit()
    else:
        device = Photoconductor(r_dark=args.r_dark, sensitivity_k=args.sensitivity)
    scene = None
    if args.scene == "logo":
        scene = make_logo_scene(32, 32, scale_x=args.scene_scale, scale_y=args.scene_scale)
    elif args.scene:
        scene = load_scene_pgm(args.scene, scale_x=args.scene_scale,
                               scale_y=args.scene_scale)
    return RackConfig(
        bind=args.bind,
        smu_port=args.smu_port if smu_port is None else smu_port,
        stage_port=args.stage_port if stage_port is None else stage_port,
        device=device,
        scene=scene,
        noise_sigma=args.noise,
        seed=args.seed,
        clock=clock,
    )


def make_llm(args):
    if args.llm == "stub":
        if not args.stub_script:
            raise SystemExit("--stub-script is required with --llm stub")
        return ScriptedStub.from_file(args.stub_script)
    return HttpBackend()


# ------------------------------ subcommands ------------------------------

def cmd_rack_up(args) -> int:
    try:
        rack = Rack(build_rack_config(args, clock="wall")).start()
    except (RackError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for descriptor in rack.resources():
        print(f"  {descriptor.resource_id}  ({descriptor.kind}: {descriptor.label})")
    print("rack ready")
    sys.stdout.flush()
    try:
        if args.duration > 0:
            time.sleep(args.duration)
        else:
            while True:
                time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        rack.stop()
    return 0


def cmd_scan_run(args) -> int:
    clock = "wall" if args.wall else "virtual"
    try:
        rack = Rack(build_rack_config(args, clock=clock)).start()
    except (RackError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    plan = ScanPlan(
        nx=args.nx, ny=args.ny, pitch_x=args.pitch_x, pitch_y=args.pitch_y,
        origin_x=args.origin_x, origin_y=args.origin_y,
        settle_ms=args.settle, bias_v=args.bias,
    )
    progress = {"count": 0}

    def on_pixel(col, row, value):
        progress["count"] += 1
        if args.progress and progress["count"] % max(1, (plan.nx * plan.ny) // 20) == 0:
            total = plan.nx * plan.ny
            print(f"  {progress['count']}/{total} pixels", file=sys.stderr)

    try:
        with rack.connect(KIND_SMU) as smu, rack.connect(KIND_STAGE) as stage:
            frame = run_scan(plan, smu, stage, rack, on_pixel=on_pixel)
    except (PlanError, RackError, ConnectionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        rack.stop()
    with open(args.out, "w", encoding="ascii") as handle:
        handle.write(export_csv(frame))
    print(f"wrote {args.out} ({frame.meta['pixels_measured']} pixels, "
          f"complete={frame.complete})")
    if args.pgm:
        with open(args.pgm, "w", encoding="ascii") as handle:
            handle.write(export_pgm(frame))
        print(f"wrote {args.pgm}")
    return 0 if frame.complete else 1


def cmd_agent_run(args) -> int:
    clock = "wall" if args.wall else "virtual"
    try:
        rack = Rack(build_rack_config(args, clock=clock)).start()
    except (RackError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        llm = make_llm(args)
        session = start_session(args.goal, rack.resources(),
                                mode=args.mode.upper(), max_iters=args.max_iters)
        session_dir = os.path.join(args.data_dir, "sessions", session.id)
        runner = AgentRunner(
            session=session,
            llm=llm,
            sandbox=make_sandbox(rack, limits=Limits(), workdir=session_dir),
            session_dir=session_dir,
            predicate=parse_predicate(args.success),
            model=args.model,
            clock=rack.clock,
            rack_snapshot=rack.config_snapshot(),
        )
        if session.mode == "STEP":
            _drive_step_interactively(runner)
        else:
            runner.run()
    finally:
        rack.stop()

    print(f"session {session.id}: {session.state}"
          + (f" ({session.fail_reason})" if session.fail_reason else ""))
    print(f"artifacts in {session_dir}")
    for iteration in session.iterations:
        status = iteration.exec.exit_description() if iteration.exec else \
            iteration.approval.get("status", "skipped")
        print(f"  iter {iteration.index}: {status}")
    return 0 if session.state == SUCCEEDED else 1


def _drive_step_interactively(runner) -> None:
    """STEP gate on the terminal: show code, ask approve/reject."""
    worker = threading.Thread(target=runner.run, daemon=True)
    worker.start()
    while worker.is_alive():
        if runner.session.state == AWAITING_APPROVAL and runner.gate.waiting:
            iteration = runner.session.iterations[-1]
            print(f"\n--- proposed code (iteration {iteration.index}) ---")
            print(iteration.proposed_code)
            print("--- approve? [y/N + optional reason] ---")
            answer = input("> ").strip()
            if answer.lower().startswith("y"):
                runner.approve(by="cli-operator")
            else:
                reason = answer[1:].strip() if answer else "rejected at terminal"
                runner.reject(by="cli-operator", reason=reason or "rejected at terminal")
        time.sleep(0.02)
    worker.join()


def cmd_serve(args) -> int:
    clock = "wall" if args.wall else "virtual"
    try:
        rack = Rack(build_rack_config(args, clock=clock)).start()
    except (RackError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    def llm_factory(session_spec):
        return make_llm(args)

    service = Service(rack, data_dir=args.data_dir,
                      llm_factory=llm_factory if args.llm else None,
                      model=args.model)
    console_dir = args.console_dir if args.console_dir and os.path.isdir(args.console_dir) \
        else None
    server = make_server(service, port=args.port, bind=args.bind,
                         console_dir=console_dir)
    print(f"serving on http://{args.bind}:{server.server_port}/v1/"
          + (f" (console at /)" if console_dir else ""))
    sys.stdout.flush()
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()
        rack.stop()
    return 0


def cmd_replay(args) -> int:
    from .agent import load_session_file
    from .replay import ReplayError, replay_session

    try:
        data = load_session_file(args.session_file)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    out_dir = args.out or tempfile.mkdtemp(prefix="autolab-replay-")
    try:
        session, problems = replay_session(data, out_dir)
    except ReplayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"replayed session {data['id']} -> {session.state} (artifacts in {out_dir})")
    if problems:
        print("divergences:", file=sys.stderr)
        for problem in problems:
            print(f"  {problem}", file=sys.stderr)
        return 1
    print("transcript and artifacts reproduced exactly")
    return 0


# -------------------------------- parser --------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autolab",
        description="Virtual lab rack, snake-raster scans, and the LabScript agent loop.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    rack_parser = commands.add_parser("rack", help="virtual instrument rack")
    rack_sub = rack_parser.add_subparsers(dest="rack_command", required=True)
    up = rack_sub.add_parser("up", help="start the rack and print its resources")
    add_rack_options(up)
    up.add_argument("--duration", type=float, default=0.0,
                    help="seconds to stay up (0 = until interrupted)")
    up.set_defaults(func=cmd_rack_up)

    scan_parser = commands.add_parser("scan", help="raster-scan acquisition")
    scan_sub = scan_parser.add_subparsers(dest="scan_command", required=True)
    run = scan_sub.add_parser("run", help="acquire one frame and export it")
    add_rack_options(run, default_ports=(0, 0))
    run.add_argument("--nx", type=positive_int, required=True)
    run.add_argument("--ny", type=positive_int, required=True)
    run.add_argument("--pitch-x", type=positive_float, default=100.0)
    run.add_argument("--pitch-y", type=positive_float, default=100.0)
    run.add_argument("--origin-x", type=nonnegative_float, default=0.0)
    run.add_argument("--origin-y", type=nonnegative_float, default=0.0)
    run.add_argument("--settle", type=nonnegative_float, default=10.0,
                     help="per-pixel settle time, ms")
    run.add_argument("--bias", type=float, default=1.0, help="bias voltage, V")
    run.add_argument("--out", required=True, help="CSV output path")
    run.add_argument("--pgm", default=None, help="also write a P2 graymap")
    run.add_argument("--wall", action="store_true",
                     help="real-time clock (default: virtual, instant)")
    run.add_argument("--progress", action="store_true")
    run.set_defaults(func=cmd_scan_run)

    agent_parser = commands.add_parser("agent", help="LLM agent sessions")
    agent_sub = agent_parser.add_subparsers(dest="agent_command", required=True)
    arun = agent_sub.add_parser("run", help="run one agent session")
    add_rack_options(arun)
    arun.add_argument("--goal", required=True)
    arun.add_argument("--mode", choices=["auto", "step"], default="auto")
    arun.add_argument("--max-iters", type=positive_int, default=8)
    arun.add_argument("--llm", choices=["stub", "http"], default="stub")
    arun.add_argument("--stub-script", default=None,
                      help="JSON file with canned replies/matchers")
    arun.add_argument("--model", default=os.environ.get(ENV_MODEL, DEFAULT_MODEL))
    arun.add_argument("--success", default="records_at_least:1",
                      help="success predicate, e.g. file_rows:iv.csv:21")
    arun.add_argument("--data-dir", default="autolab_data")
    arun.add_argument("--wall", action="store_true")
    arun.set_defaults(func=cmd_agent_run)

    serve = commands.add_parser("serve", help="HTTP API + event streams")
    add_rack_options(serve, default_ports=(5025, 5026))
    serve.add_argument("--port", type=int, default=8765)
    serve.add_argument("--llm", choices=["stub", "http"], default=None)
    serve.add_argument("--stub-script", default=None)
    serve.add_argument("--model", default=os.environ.get(ENV_MODEL, DEFAULT_MODEL))
    serve.add_argument("--data-dir", default="autolab_data")
    serve.add_argument("--console-dir", default=os.path.join("frontend", "dist"))
    serve.add_argument("--wall", action="store_true",
                       help="real-time rack clock (default: virtual)")
    serve.set_defaults(func=cmd_serve)

    replay = commands.add_parser("replay", help="re-run a recorded session and compare")
    replay.add_argument("session_file")
    replay.add_argument("--out", default=None, help="directory for replayed artifacts")
    replay.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130
    except (RackError, SceneError, PlanError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
