"""TCP transport: the virtual instrument rack and its resource registry.

Each instrument is exposed as a newline-framed TCP session on its own port.
Exactly one client may own an instrument at a time; a second connector is
told ``ERR 3 BUSY`` and dropped. The rack also owns the scene and feeds the
SMU's photoconductor irradiance from the live stage position, so every
client (scan engine or generated script) sees position-dependent current.
"""

from __future__ import annotations

import logging
import re
import socket
import threading
from dataclasses import dataclass
from typing import Optional

from .clock import VirtualClock, WallClock
from .scene import Scene, load_scene_pgm
from .scpi import DeviceModel, Ohmic, OpenCircuit, Photoconductor, VirtualSmu
from .stage import DEFAULT_VELOCITY, X_MAX_DEFAULT, Y_MAX_DEFAULT, VirtualStage

log = logging.getLogger(__name__)

KIND_SMU = "SCPI_SMU"
KIND_STAGE = "XYP_STAGE"

_RESOURCE_RE = re.compile(r"^TCPIP::(?P<host>[^:]+)::(?P<port>\d+)::SOCKET$")


class RackError(RuntimeError):
    pass


@dataclass(frozen=True)
class ResourceDescriptor:
    resource_id: str
    kind: str
    label: str


def make_resource_id(host: str, port: int) -> str:
    return f"TCPIP::{host}::{port}::SOCKET"


def parse_resource_id(resource_id: str) -> tuple[str, int]:
    match = _RESOURCE_RE.match(resource_id.strip())
    if not match:
        raise ValueError(f"bad resource id {resource_id!r}")
    return match.group("host"), int(match.group("port"))


@dataclass
class RackConfig:
    bind: str = "127.0.0.1"
    smu_port: int = 5025
    stage_port: int = 5026
    smu_enabled: bool = True
    stage_enabled: bool = True
    device: Optional[DeviceModel] = None  # default: dark photoconductor
    scene: Optional[Scene] = None
    scene_path: Optional[str] = None
    noise_sigma: float = 0.0
    seed: int = 0
    velocity: float = DEFAULT_VELOCITY
    x_max: float = X_MAX_DEFAULT
    y_max: float = Y_MAX_DEFAULT
    clock: object = None  # "virtual" | "wall" | a clock instance

    def resolve_clock(self):
        if self.clock in (None, "wall"):
            return WallClock()
        if self.clock == "virtual":
            return VirtualClock()
        return self.clock


def default_device() -> DeviceModel:
    return Photoconductor(r_dark=10000.0, sensitivity_k=9.0, irradiance=0.0)


def device_to_dict(device: DeviceModel) -> dict:
    if isinstance(device, Ohmic):
        return {"kind": "ohmic", "resistance": device.resistance}
    if isinstance(device, Photoconductor):
        return {
            "kind": "photoconductor",
            "r_dark": device.r_dark,
            "sensitivity_k": device.sensitivity_k,
            "irradiance": device.irradiance,
        }
    return {"kind": "open"}


def device_from_dict(data: dict) -> DeviceModel:
    kind = data.get("kind", "open")
    if kind == "ohmic":
        return Ohmic(resistance=data["resistance"])
    if kind == "photoconductor":
        return Photoconductor(
            r_dark=data["r_dark"],
            sensitivity_k=data["sensitivity_k"],
            irradiance=data.get("irradiance", 0.0),
        )
    return OpenCircuit()


def scene_to_dict(scene: Optional[Scene]) -> Optional[dict]:
    if scene is None:
        return None
    return {
        "pixels": scene.pixels,
        "origin_x": scene.origin_x,
        "origin_y": scene.origin_y,
        "scale_x": scene.scale_x,
        "scale_y": scene.scale_y,
        "source": scene.source,
    }


def scene_from_dict(data: Optional[dict]) -> Optional[Scene]:
    if data is None:
        return None
    return Scene(
        pixels=data["pixels"],
        origin_x=data.get("origin_x", 0.0),
        origin_y=data.get("origin_y", 0.0),
        scale_x=data.get("scale_x", 100.0),
        scale_y=data.get("scale_y", 100.0),
        source=data.get("source", ""),
    )


class _Listener:
    """Accept loop for one instrument; one owning session at a time."""

    def __init__(self, name: str, bind: str, port: int, handle_line, state_lock):
        self.name = name
        self.handle_line = handle_line
        self.state_lock = state_lock
        self.owner_lock = threading.Lock()
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self.sock.bind((bind, port))
        except OSError as exc:
            self.sock.close()
            raise RackError(f"cannot bind {name} listener to {bind}:{port}: {exc}") from exc
        self.sock.listen(4)
        self.port = self.sock.getsockname()[1]
        self.host = bind
        self._running = True
        self.thread = threading.Thread(target=self._accept_loop, daemon=True,
                                       name=f"rack-{name}-listener")

    def start(self):
        self.thread.start()

    def stop(self):
        self._running = False
        # shutdown wakes a thread blocked in accept(); close alone does not
        # release the listening port on Linux while accept is in flight.
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass
        self.thread.join(timeout=2.0)

    def _accept_loop(self):
        while self._running:
            try:
                conn, peer = self.sock.accept()
            except OSError:
                return
            if not self.owner_lock.acquire(blocking=False):
                try:
                    conn.sendall(b"ERR 3 BUSY\n")
                except OSError:
                    pass
                conn.close()
                continue
            threading.Thread(
                target=self._session, args=(conn, peer), daemon=True,
                name=f"rack-{self.name}-session",
            ).start()

    def _session(self, conn: socket.socket, peer):
        try:
            buffer = b""
            while True:
                chunk = conn.recv(4096)
                if not chunk:
                    if buffer:
                        log.debug("%s: discarding partial line from %s", self.name, peer)
                    return
                buffer += chunk
                while b"\n" in buffer:
                    raw, buffer = buffer.split(b"\n", 1)
                    line = raw.decode("utf-8", errors="replace").rstrip("\r")
                    with self.state_lock:
                        responses = self.handle_line(line)
                    for response in responses:
                        conn.sendall(response.encode("utf-8") + b"\n")
        except OSError:
            log.debug("%s: session with %s torn down", self.name, peer)
        finally:
            try:
                conn.close()
            except OSError:
                pass
            self.owner_lock.release()


class Rack:
    """Running rack: instruments, listeners, registry, scene wiring."""

    def __init__(self, config: Optional[RackConfig] = None):
        self.config = config if config is not None else RackConfig()
        self.clock = self.config.resolve_clock()

        scene = self.config.scene
        if scene is None and self.config.scene_path:
            try:
                scene = load_scene_pgm(self.config.scene_path)
            except Exception as exc:
                raise RackError(f"cannot load scene: {exc}") from exc
        self.scene = scene

        device = self.config.device if self.config.device is not None else default_device()
        self.smu = VirtualSmu(device=device, noise_sigma=self.config.noise_sigma,
                              seed=self.config.seed) if self.config.smu_enabled else None
        self.stage = VirtualStage(
            clock=self.clock, x_max=self.config.x_max, y_max=self.config.y_max,
            velocity=self.config.velocity,
        ) if self.config.stage_enabled else None

        self._smu_lock = threading.RLock()
        self._stage_lock = threading.RLock()
        if self.smu is not None and self.stage is not None and self.scene is not None:
            self.smu.irradiance_source = self._scene_irradiance

        self._listeners: list[_Listener] = []
        self._started = False

    # Scene reflectance at the live stage position (called from the SMU
    # session thread immediately before each measurement).
    def _scene_irradiance(self) -> float:
        with self._stage_lock:
            pose = self.stage.pose_now()
        return self.scene.sample(pose.x, pose.y)

    def start(self) -> "Rack":
        if self._started:
            return self
        try:
            if self.smu is not None:
                self._listeners.append(_Listener(
                    "smu", self.config.bind, self.config.smu_port,
                    self.smu.handle_line, self._smu_lock,
                ))
            if self.stage is not None:
                self._listeners.append(_Listener(
                    "stage", self.config.bind, self.config.stage_port,
                    self.stage.handle_line, self._stage_lock,
                ))
        except RackError:
            self.stop()
            raise
        for listener in self._listeners:
            listener.start()
        self._started = True
        return self

    def stop(self) -> None:
        for listener in self._listeners:
            listener.stop()
        self._listeners = []
        self._started = False

    def __enter__(self) -> "Rack":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    def _listener(self, name: str) -> Optional[_Listener]:
        for listener in self._listeners:
            if listener.name == name:
                return listener
        return None

    def resources(self) -> list[ResourceDescriptor]:
        """Connectable instruments, SMU first; stable across calls."""
        out = []
        smu = self._listener("smu")
        if smu is not None:
            out.append(ResourceDescriptor(
                resource_id=make_resource_id(smu.host, smu.port),
                kind=KIND_SMU, label="Virtual SMU (Model 2450)",
            ))
        stage = self._listener("stage")
        if stage is not None:
            out.append(ResourceDescriptor(
                resource_id=make_resource_id(stage.host, stage.port),
                kind=KIND_STAGE, label="Virtual XY stage (8MTF-75)",
            ))
        return out

    def resource(self, kind: str) -> ResourceDescriptor:
        for descriptor in self.resources():
            if descriptor.kind == kind:
                return descriptor
        raise RackError(f"no {kind} resource in this rack")

    def connect(self, kind: str, timeout: float = 5.0) -> "LineSession":
        host, port = parse_resource_id(self.resource(kind).resource_id)
        return LineSession(host, port, timeout=timeout)

    def config_snapshot(self) -> dict:
        """Actual bound ports plus everything needed to rebuild this rack."""
        smu = self._listener("smu")
        stage = self._listener("stage")
        return {
            "bind": self.config.bind,
            "smu_port": smu.port if smu else None,
            "stage_port": stage.port if stage else None,
            "device": device_to_dict(self.smu.device) if self.smu else None,
            "scene": scene_to_dict(self.scene),
            "noise_sigma": self.config.noise_sigma,
            "seed": self.config.seed,
            "velocity": self.config.velocity,
            "x_max": self.config.x_max,
            "y_max": self.config.y_max,
        }


def config_from_snapshot(snapshot: dict, clock="virtual") -> RackConfig:
    return RackConfig(
        bind=snapshot.get("bind", "127.0.0.1"),
        smu_port=snapshot["smu_port"] if snapshot.get("smu_port") else 0,
        stage_port=snapshot["stage_port"] if snapshot.get("stage_port") else 0,
        smu_enabled=snapshot.get("smu_port") is not None,
        stage_enabled=snapshot.get("stage_port") is not None,
        device=device_from_dict(snapshot["device"]) if snapshot.get("device") else None,
        scene=scene_from_dict(snapshot.get("scene")),
        noise_sigma=snapshot.get("noise_sigma", 0.0),
        seed=snapshot.get("seed", 0),
        velocity=snapshot.get("velocity", DEFAULT_VELOCITY),
        x_max=snapshot.get("x_max", X_MAX_DEFAULT),
        y_max=snapshot.get("y_max", Y_MAX_DEFAULT),
        clock=clock,
    )


def rack_up(config: Optional[RackConfig] = None) -> Rack:
    return Rack(config).start()


def list_resources(rack: Rack) -> list[ResourceDescriptor]:
    return rack.resources()


class SessionClosed(ConnectionError):
    pass


class LineSession:
    """Client side of a newline-framed instrument session."""

    def __init__(self, host: str, port: int, timeout: float = 5.0):
        self.timeout = timeout
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self._buffer = b""
        self._closed = False

    def send(self, line: str) -> None:
        self.sock.sendall(line.encode("utf-8") + b"\n")

    def read_line(self, timeout: Optional[float] = None) -> Optional[str]:
        """Next response line; None on timeout, SessionClosed on EOF."""
        self.sock.settimeout(self.timeout if timeout is None else timeout)
        while b"\n" not in self._buffer:
            try:
                chunk = self.sock.recv(4096)
            except socket.timeout:
                return None
            if not chunk:
                raise SessionClosed("instrument closed the session")
            self._buffer += chunk
        raw, self._buffer = self._buffer.split(b"\n", 1)
        return raw.decode("utf-8").rstrip("\r")

    def query(self, line: str, timeout: Optional[float] = None) -> Optional[str]:
        self.send(line)
        return self.read_line(timeout)

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            try:
                self.sock.close()
            except OSError:
                pass

    def __enter__(self) -> "LineSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
