"""HTTP service: runs scans and agent sessions against one rack, exposes
approval endpoints, and streams progress as line-delimited JSON events.

Endpoints are versioned under /v1/. The CLI drives the same core functions
(run_scan, AgentRunner); the service adds ids, persistence, and streams.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional

from . import events as ev
from .agent import (
    AgentRunner,
    ApprovalConflict,
    make_sandbox,
    parse_predicate,
    start_session,
)
from .events import EventLog
from .labscript import Limits
from .llm import DEFAULT_MODEL, ScriptedStub
from .rack import KIND_SMU, KIND_STAGE, Rack
from .scan import Frame, ScanPlan, export_csv, run_scan


class NotFound(KeyError):
    pass


class Conflict(RuntimeError):
    pass


class BadRequest(ValueError):
    pass


class _ScanJob:
    def __init__(self, job_id: str, plan: ScanPlan):
        self.id = job_id
        self.plan = plan
        self.events = EventLog(job_id)
        self.lock = threading.Lock()
        self.data = [0.0] * (plan.nx * plan.ny)
        self.pixels_measured = 0
        self.state = "Running"
        self.frame: Optional[Frame] = None

    def frame_view(self) -> dict:
        with self.lock:
            view = {
                "nx": self.plan.nx,
                "ny": self.plan.ny,
                "data": list(self.data),
                "pixels_measured": self.pixels_measured,
                "state": self.state,
                "complete": self.frame.complete if self.frame else False,
            }
            if self.frame is not None:
                view["meta"] = self.frame.meta
            return view


class _SessionJob:
    def __init__(self, job_id: str, runner: AgentRunner):
        self.id = job_id
        self.runner = runner
        self.events = runner.events


class Service:
    def __init__(self, rack: Rack, data_dir: str, llm_factory=None,
                 model: str = DEFAULT_MODEL, limits: Optional[Limits] = None):
        self.rack = rack
        self.data_dir = data_dir
        self.llm_factory = llm_factory  # callable(session_spec) -> backend
        self.model = model
        self.limits = limits if limits is not None else Limits()
        self.scans: dict[str, _ScanJob] = {}
        self.sessions: dict[str, _SessionJob] = {}
        self._lock = threading.Lock()
        os.makedirs(data_dir, exist_ok=True)

    # ------------------------------ rack ------------------------------

    def rack_view(self) -> dict:
        return {
            "resources": [
                {"resource_id": d.resource_id, "kind": d.kind, "label": d.label}
                for d in self.rack.resources()
            ]
        }

    # ------------------------------ scans ------------------------------

    def create_scan(self, body: dict) -> str:
        try:
            plan = ScanPlan(
                nx=int(body["nx"]),
                ny=int(body["ny"]),
                pitch_x=float(body.get("pitch_x", 100.0)),
                pitch_y=float(body.get("pitch_y", 100.0)),
                origin_x=float(body.get("origin_x", 0.0)),
                origin_y=float(body.get("origin_y", 0.0)),
                settle_ms=float(body.get("settle_ms", 10.0)),
                bias_v=float(body.get("bias_v", 1.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BadRequest(f"bad scan plan: {exc}") from None
        job = _ScanJob(uuid.uuid4().hex[:12], plan)
        with self._lock:
            self.scans[job.id] = job
        threading.Thread(target=self._run_scan_job, args=(job,), daemon=True,
                         name=f"scan-{job.id}").start()
        return job.id

    def _run_scan_job(self, job: _ScanJob) -> None:
        def on_pixel(col: int, row: int, value: float) -> None:
            with job.lock:
                job.data[row * job.plan.nx + col] = value
                job.pixels_measured += 1
            job.events.append(ev.PIXEL_MEASURED,
                              {"col": col, "row": row, "current_A": value})

        try:
            with self.rack.connect(KIND_SMU) as smu, self.rack.connect(KIND_STAGE) as stage:
                frame = run_scan(job.plan, smu, stage, self.rack, on_pixel=on_pixel)
            with job.lock:
                job.frame = frame
                job.state = "Finished" if frame.complete else "Aborted"
            csv_path = os.path.join(self.data_dir, f"scan-{job.id}.csv")
            with open(csv_path, "w", encoding="ascii") as handle:
                handle.write(export_csv(frame))
            job.events.append(ev.SCAN_FINISHED, {
                "complete": frame.complete,
                "pixels_measured": frame.meta.get("pixels_measured", 0),
                "csv": os.path.basename(csv_path),
            })
        except Exception as exc:  # rack torn down, plan error, ...
            with job.lock:
                job.state = "Aborted"
            job.events.append(ev.SCAN_FINISHED, {"complete": False, "error": str(exc)})

    def scan_frame(self, scan_id: str) -> dict:
        job = self.scans.get(scan_id)
        if job is None:
            raise NotFound(scan_id)
        return job.frame_view()

    # ----------------------------- sessions -----------------------------

    def create_session(self, body: dict) -> str:
        goal = body.get("goal")
        if not goal or not isinstance(goal, str):
            raise BadRequest("goal is required")
        mode = str(body.get("mode", "auto")).upper()
        if mode not in ("AUTO", "STEP"):
            raise BadRequest("mode must be auto or step")
        try:
            max_iters = int(body.get("max_iters", 8))
        except (TypeError, ValueError):
            raise BadRequest("max_iters must be an integer") from None
        if max_iters < 1:
            raise BadRequest("max_iters must be >= 1")

        if "stub" in body:
            llm = ScriptedStub.from_dict(body["stub"])
        elif self.llm_factory is not None:
            llm = self.llm_factory(body)
        else:
            raise BadRequest("no LLM backend configured; pass a stub")

        session = start_session(goal, self.rack.resources(), mode=mode,
                                max_iters=max_iters)
        session_dir = os.path.join(self.data_dir, "sessions", session.id)
        predicate = parse_predicate(body.get("predicate", {"records_at_least": 1}))
        runner = AgentRunner(
            session=session,
            llm=llm,
            sandbox=make_sandbox(self.rack, limits=self.limits, workdir=session_dir),
            session_dir=session_dir,
            predicate=predicate,
            model=body.get("model", self.model),
            clock=self.rack.clock,
            event_log=EventLog(session.id),
            rack_snapshot=self.rack.config_snapshot(),
        )
        job = _SessionJob(session.id, runner)
        with self._lock:
            self.sessions[session.id] = job
        threading.Thread(target=runner.run, daemon=True,
                         name=f"session-{session.id}").start()
        return session.id

    def _session(self, session_id: str) -> _SessionJob:
        job = self.sessions.get(session_id)
        if job is None:
            raise NotFound(session_id)
        return job

    def session_view(self, session_id: str) -> dict:
        runner = self._session(session_id).runner
        payload = runner.session.to_dict()
        payload["model"] = runner.model
        payload["predicate"] = runner.predicate.to_dict()
        return payload

    def approve(self, session_id: str, by: str = "operator") -> None:
        try:
            self._session(session_id).runner.approve(by=by)
        except ApprovalConflict as exc:
            raise Conflict(str(exc)) from None

    def reject(self, session_id: str, reason: str, by: str = "operator") -> None:
        try:
            self._session(session_id).runner.reject(by=by, reason=reason)
        except ApprovalConflict as exc:
            raise Conflict(str(exc)) from None

    # ------------------------------ events ------------------------------

    def event_log(self, stream_id: str) -> EventLog:
        job = self.scans.get(stream_id)
        if job is not None:
            return job.events
        session = self.sessions.get(stream_id)
        if session is not None and session.events is not None:
            return session.events
        raise NotFound(stream_id)


def _json_bytes(payload) -> bytes:
    return (json.dumps(payload) + "\n").encode("utf-8")


class Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"
    service: Service = None  # injected by make_server
    console_dir: Optional[str] = None

    def log_message(self, *args):
        pass

    # ----------------------------- plumbing -----------------------------

    def _reply_json(self, status: int, payload) -> None:
        body = _json_bytes(payload)
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _reply_empty(self, status: int) -> None:
        self.send_response(status)
        self.send_header("Content-Length", "0")
        self.end_headers()

    def _read_body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            payload = json.loads(raw)
        except ValueError:
            raise BadRequest("request body is not valid JSON") from None
        if not isinstance(payload, dict):
            raise BadRequest("request body must be a JSON object")
        return payload

    def _route(self, method: str) -> None:
        path, _, query = self.path.partition("?")
        parts = [p for p in path.split("/") if p]
        params = {}
        for pair in query.split("&"):
            if "=" in pair:
                key, value = pair.split("=", 1)
                params[key] = value
        try:
            self._dispatch(method, parts, params)
        except NotFound as exc:
            self._reply_json(404, {"error": f"unknown id: {exc.args[0]}"})
        except Conflict as exc:
            self._reply_json(409, {"error": str(exc)})
        except BadRequest as exc:
            self._reply_json(400, {"error": str(exc)})
        except (BrokenPipeError, ConnectionResetError):
            pass

    def _dispatch(self, method: str, parts: list[str], params: dict) -> None:
        service = self.service
        if method == "GET" and parts == ["v1", "rack"]:
            self._reply_json(200, service.rack_view())
        elif method == "POST" and parts == ["v1", "scans"]:
            self._reply_json(200, {"id": service.create_scan(self._read_body())})
        elif method == "GET" and len(parts) == 4 and parts[:2] == ["v1", "scans"] \
                and parts[3] == "frame":
            self._reply_json(200, service.scan_frame(parts[2]))
        elif method == "POST" and parts == ["v1", "sessions"]:
            self._reply_json(200, {"id": service.create_session(self._read_body())})
        elif method == "GET" and len(parts) == 3 and parts[:2] == ["v1", "sessions"]:
            self._reply_json(200, service.session_view(parts[2]))
        elif method == "POST" and len(parts) == 4 and parts[:2] == ["v1", "sessions"] \
                and parts[3] in ("approve", "reject"):
            body = self._read_body()
            if parts[3] == "approve":
                service.approve(parts[2], by=body.get("by", "operator"))
            else:
                service.reject(parts[2], reason=body.get("reason", ""),
                               by=body.get("by", "operator"))
            self._reply_empty(204)
        elif method == "GET" and len(parts) == 3 and parts[:2] == ["v1", "events"]:
            self._stream_events(parts[2], int(params.get("since", 0)))
        elif method == "GET" and self.console_dir:
            self._serve_static(parts)
        else:
            self._reply_json(404, {"error": f"no route: {method} {'/'.join(parts)}"})

    def _stream_events(self, stream_id: str, since: int) -> None:
        log = self.service.event_log(stream_id)  # NotFound propagates
        self.send_response(200)
        self.send_header("Content-Type", "application/x-ndjson")
        self.send_header("Cache-Control", "no-cache")
        self.send_header("Connection", "close")
        self.end_headers()
        cursor = since
        try:
            while True:
                batch = log.wait(cursor, timeout=0.5)
                for event in batch:
                    self.wfile.write(_json_bytes(event.to_dict()))
                self.wfile.flush()
                if batch:
                    cursor = batch[-1].seq
                if log.terminal and not log.events_since(cursor):
                    return
        except (BrokenPipeError, ConnectionResetError):
            return
        finally:
            self.close_connection = True

    _STATIC_TYPES = {
        ".html": "text/html", ".js": "text/javascript", ".css": "text/css",
        ".svg": "image/svg+xml", ".png": "image/png", ".ico": "image/x-icon",
        ".map": "application/json",
    }

    def _serve_static(self, parts: list[str]) -> None:
        relative = "/".join(parts) or "index.html"
        root = os.path.realpath(self.console_dir)
        full = os.path.realpath(os.path.join(root, relative))
        if not full.startswith(root + os.sep) and full != root:
            self._reply_json(404, {"error": "not found"})
            return
        if os.path.isdir(full):
            full = os.path.join(full, "index.html")
        if not os.path.isfile(full):
            self._reply_json(404, {"error": "not found"})
            return
        ext = os.path.splitext(full)[1].lower()
        with open(full, "rb") as handle:
            body = handle.read()
        self.send_response(200)
        self.send_header("Content-Type", self._STATIC_TYPES.get(ext, "application/octet-stream"))
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        self._route("GET")

    def do_POST(self):
        self._route("POST")


def make_server(service: Service, port: int = 8765, bind: str = "127.0.0.1",
                console_dir: Optional[str] = None) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (Handler,), {
        "service": service, "console_dir": console_dir,
    })
    server = ThreadingHTTPServer((bind, port), handler)
    server.daemon_threads = True
    return server
