"""Materialize a bound blueprint: stage per-module data directories, spawn
each module in an isolated sandbox, supervise heartbeats, restart failures
and apply dynamic extension deltas to a running deployment.

The default backend runs modules as OS processes, each in its own session
and working directory; a container backend is an ``ExecutorBackend``
implementation point left to deployments that have a daemon available.
Module failure is detected by heartbeat loss, not exit codes alone, so a
wedged-but-alive module is restarted too.  Restarts get a fresh sandbox
but keep the module's staged data directory.
"""

from __future__ import annotations

import dataclasses
import importlib
import json
import logging
import os
import queue
import selectors
import shutil
import signal
import socket
import subprocess
import sys
import threading
import time
from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .blueprint import (
    BlueprintError,
    BoundBlueprint,
    ConnectionBlueprint,
    bind_blueprint,
    bind_extension,
    build_blueprint,
    extend_blueprint,
)
from .config import VehicleConfig
from .frame import (
    BoundInput,
    BoundOutput,
    CONFIG_FILE,
    ENDPOINTS_FILE,
    HeartbeatEndpoint,
    ModuleEndpoints,
    ModuleManifest,
    STATUS_FILE,
)
from .hal import build_hal
from .netio import IngestServer, Loop
from .wire import MsgType

log = logging.getLogger(__name__)

STARTUP_HEARTBEAT_WINDOW_S = 5.0
RESTART_BUDGET = 3
RESTART_WINDOW_S = 60.0
STOP_GRACE_S = 2.0


class DeploymentError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Executor backends

@dataclass(frozen=True)
class SandboxInfo:
    sandbox_id: str
    root: Path


@dataclass
class SandboxHandle:
    sandbox_id: str
    root: Path
    pid: int
    _proc: Optional[subprocess.Popen] = None


class ExecutorBackend(ABC):
    """Contract every sandbox executor implements.

    ``spawn`` of distinct modules must yield isolated address spaces and
    disjoint filesystem roots; ``signal_stop`` must be idempotent.
    """

    @abstractmethod
    def stage(self, module: str, incarnation: int,
              source_dir: Optional[Path]) -> SandboxInfo: ...

    @abstractmethod
    def spawn(self, sandbox: SandboxInfo, argv: Sequence[str],
              env: Optional[dict] = None) -> SandboxHandle: ...

    @abstractmethod
    def signal_stop(self, handle: SandboxHandle): ...

    @abstractmethod
    def is_alive(self, handle: SandboxHandle) -> bool: ...


class ProcessBackend(ExecutorBackend):
    """OS-process sandboxes under per-incarnation working directories."""

    def __init__(self, runtime_root: Union[str, Path]):
        self.runtime_root = Path(runtime_root)
        self.runtime_root.mkdir(parents=True, exist_ok=True)

    def stage(self, module: str, incarnation: int,
              source_dir: Optional[Path]) -> SandboxInfo:
        sandbox_id = f"{module}-{incarnation}"
        root = self.runtime_root / sandbox_id
        if root.exists():
            shutil.rmtree(root)
        root.mkdir(parents=True)
        if source_dir is not None:
            shutil.copytree(source_dir, root / "module")
        return SandboxInfo(sandbox_id, root)

    def spawn(self, sandbox: SandboxInfo, argv: Sequence[str],
              env: Optional[dict] = None) -> SandboxHandle:
        full_env = dict(os.environ)
        full_env["PYTHONUNBUFFERED"] = "1"
        if env:
            full_env.update(env)
        out = open(sandbox.root / "stdout.log", "ab")
        err = open(sandbox.root / "stderr.log", "ab")
        try:
            proc = subprocess.Popen(
                list(argv), cwd=sandbox.root, env=full_env,
                stdout=out, stderr=err, stdin=subprocess.DEVNULL,
                start_new_session=True, close_fds=True)
        except OSError as exc:
            raise DeploymentError(f"spawn failed for {sandbox.sandbox_id}: {exc}") from exc
        finally:
            out.close()
            err.close()
        return SandboxHandle(sandbox.sandbox_id, sandbox.root, proc.pid, proc)

    def signal_stop(self, handle: SandboxHandle):
        proc = handle._proc
        if proc is None or proc.poll() is not None:
            return
        for sig, wait in ((signal.SIGTERM, STOP_GRACE_S), (signal.SIGKILL, 2.0)):
            try:
                os.killpg(proc.pid, sig)
            except ProcessLookupError:
                return
            try:
                proc.wait(timeout=wait)
                return
            except subprocess.TimeoutExpired:
                continue

    def is_alive(self, handle: SandboxHandle) -> bool:
        return handle._proc is not None and handle._proc.poll() is None


class ContainerBackend(ExecutorBackend):
    """Extension point for daemon-backed container isolation.

    Deliberately unimplemented here: desk-scale runs must not require a
    container daemon, but deployments that have one can implement this
    interface without touching the deployment handler.
    """

    def stage(self, module, incarnation, source_dir):
        raise NotImplementedError("provide a container runtime integration")

    def spawn(self, sandbox, argv, env=None):
        raise NotImplementedError("provide a container runtime integration")

    def signal_stop(self, handle):
        raise NotImplementedError

    def is_alive(self, handle):
        raise NotImplementedError


# --------------------------------------------------------------------------
# Staging

@dataclass(frozen=True)
class ModuleConfig:
    timeout_ms: int
    external_ports: tuple[int, ...]


def _resolve_hook(spec: str):
    mod_name, _, attr = spec.partition(":")
    if not attr:
        raise DeploymentError(f"bad config hook {spec!r}; expected 'module:callable'")
    module = importlib.import_module(mod_name)
    return getattr(module, attr)


def create_module_config(manifest: ModuleManifest, vehicle_cfg: VehicleConfig,
                         data_dir: Path, endpoints: ModuleEndpoints) -> ModuleConfig:
    """Stage a module's data directory: the bound endpoint map plus, when the
    module's configuration-creation hook produces parameters, a config file
    with the vehicle-specific excerpt it asked for."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DeploymentError(f"data dir {data_dir} does not exist")
    if any(data_dir.iterdir()):
        raise DeploymentError(f"data dir {data_dir} is not empty")
    params = {}
    if manifest.config_hook:
        hook = _resolve_hook(manifest.config_hook)
        params = hook(manifest, vehicle_cfg) or {}
    (data_dir / ENDPOINTS_FILE).write_text(endpoints.to_json())
    if params:
        doc = {"module": manifest.name, "params": params}
        (data_dir / CONFIG_FILE).write_text(json.dumps(doc, indent=2) + "\n")
    return ModuleConfig(manifest.timeout_ms, manifest.external_ports)


# --------------------------------------------------------------------------
# Plan

@dataclass
class ModuleAssignment:
    manifest: ModuleManifest
    source_dir: Optional[Path]
    data_dir: Path
    endpoints: ModuleEndpoints
    hb_stream: int
    state: str = "staged"  # staged|running|failed|restarting|stopped
    incarnation: int = 0
    sandbox: Optional[SandboxHandle] = None
    last_hb: Optional[float] = None
    restart_times: deque = field(default_factory=deque)


@dataclass
class DeploymentPlan:
    root: Path
    host: str
    vehicle_cfg: VehicleConfig
    bound: BoundBlueprint
    supervisor_port: int
    assignments: dict[str, ModuleAssignment]
    next_hb_stream: int

    @property
    def blueprint(self) -> ConnectionBlueprint:
        return self.bound.blueprint


def _module_endpoints(name: str, manifest: ModuleManifest, bound: BoundBlueprint,
                      host: str, supervisor_port: int,
                      hb_stream: int) -> ModuleEndpoints:
    inputs = []
    required = {d.name: d.required for d in manifest.inputs}
    for edge in bound.blueprint.inbound(name):
        ehost, port, stream = bound.edge_binding(edge)
        inputs.append(BoundInput(edge.consumer_port, edge.topic, ehost, port,
                                 stream, required.get(edge.consumer_port, True)))
    outputs = []
    for decl in manifest.outputs:
        streams = tuple(
            (e.consumer, bound.edge_streams[e])
            for e in bound.blueprint.outbound(name) if e.producer_port == decl.name)
        outputs.append(BoundOutput(decl.name, decl.topic, host,
                                   bound.port_of(name, decl.name), streams))
    return ModuleEndpoints(
        module=name, timeout_ms=manifest.timeout_ms, inputs=tuple(inputs),
        outputs=tuple(outputs),
        heartbeat=HeartbeatEndpoint(host, supervisor_port, hb_stream))


def plan_deployment(vehicle_cfg: VehicleConfig,
                    app_modules: Sequence[tuple[ModuleManifest, Optional[Path]]],
                    root: Union[str, Path], host: str = "127.0.0.1",
                    port_base: int = 42000,
                    include_hal: bool = True) -> DeploymentPlan:
    """Compile config + manifests into a staged-but-not-spawned plan."""
    root = Path(root)
    manifests: list[tuple[ModuleManifest, Optional[Path]]] = []
    if include_hal:
        manifests += [(spec.manifest(), None) for spec in build_hal(vehicle_cfg)]
    manifests += list(app_modules)
    bp = build_blueprint([m for m, _ in manifests])
    bound = bind_blueprint(bp, host, port_base)
    reserved = bound.reserved
    sup_port = bound.next_port
    while sup_port in reserved:
        sup_port += 1
    bound = dataclasses.replace(bound, next_port=sup_port + 1)

    sources = {m.name: src for m, src in manifests}
    assignments: dict[str, ModuleAssignment] = {}
    hb = 1
    for name in bp.nodes:  # lexicographic
        manifest = bp.manifest(name)
        endpoints = _module_endpoints(name, manifest, bound, host, sup_port, hb)
        assignments[name] = ModuleAssignment(
            manifest=manifest, source_dir=sources[name],
            data_dir=root / "modules" / name / "data",
            endpoints=endpoints, hb_stream=hb)
        hb += 1
    return DeploymentPlan(root=root, host=host, vehicle_cfg=vehicle_cfg,
                          bound=bound, supervisor_port=sup_port,
                          assignments=assignments, next_hb_stream=hb)


def load_module_dir(path: Union[str, Path]) -> tuple[ModuleManifest, Path]:
    path = Path(path)
    manifest = ModuleManifest.load(path / "manifest.json")
    return manifest, path


def _resolve_entry(entry: Sequence[str], sandbox: SandboxInfo,
                   data_dir: Path) -> list[str]:
    argv = []
    for token in entry:
        token = token.replace("{python}", sys.executable)
        token = token.replace("{module_dir}", str(sandbox.root / "module"))
        argv.append(token)
    argv.append(str(data_dir))
    return argv


# --------------------------------------------------------------------------
# Events

@dataclass(frozen=True)
class HealthEvent:
    kind: str        # started|running|failed|restarted|stopped|delta-applied
    module: str = ""
    detail: str = ""
    sandbox_id: str = ""
    t: float = field(default_factory=time.time)


class Deployment:
    """A live deployment: supervisor loop, control socket, dynamic deltas."""

    def __init__(self, plan: DeploymentPlan, backend: ExecutorBackend):
        self.plan = plan
        self.backend = backend
        self.loop = Loop()
        self.events: "queue.SimpleQueue[HealthEvent]" = queue.SimpleQueue()
        self.event_log: list[HealthEvent] = []
        self._lock = threading.RLock()
        self._stop = False
        self._thread: Optional[threading.Thread] = None
        self._hb_by_stream: dict[int, str] = {}
        self._hb_server: Optional[IngestServer] = None
        self._control: Optional[socket.socket] = None
        self.control_path: Optional[Path] = None
        self._debug_sub = None
        self._app_sources: dict[str, Optional[Path]] = {}

    # -- events -----------------------------------------------------------

    def _emit(self, kind: str, module: str = "", detail: str = "",
              sandbox_id: str = ""):
        ev = HealthEvent(kind, module, detail, sandbox_id)
        self.event_log.append(ev)
        self.events.put(ev)
        log.info("event: %s %s %s", kind, module, detail)

    # -- startup ----------------------------------------------------------

    def start(self):
        plan = self.plan
        plan.root.mkdir(parents=True, exist_ok=True)
        self._hb_server = IngestServer(
            self.loop, "supervisor.hb", plan.host, plan.supervisor_port,
            self._on_heartbeat)
        self._open_control_socket()
        try:
            for name, assignment in sorted(plan.assignments.items()):
                self._stage_and_spawn(assignment, fresh_data=True)
        except Exception:
            self._abort_all()
            raise
        self._await_first_heartbeats()
        self._thread = threading.Thread(target=self._supervise_loop, daemon=True,
                                        name="autoframe-supervisor")
        self._thread.start()
        self._emit("running", detail="deployment running")
        return self

    def _stage_and_spawn(self, assignment: ModuleAssignment, fresh_data: bool):
        with self._lock:
            name = assignment.manifest.name
            self._app_sources[name] = assignment.source_dir
            assignment.incarnation += 1
            sandbox = self.backend.stage(name, assignment.incarnation,
                                         assignment.source_dir)
            if fresh_data:
                assignment.data_dir.mkdir(parents=True, exist_ok=True)
                create_module_config(assignment.manifest, self.plan.vehicle_cfg,
                                     assignment.data_dir, assignment.endpoints)
            argv = _resolve_entry(assignment.manifest.entry, sandbox,
                                  assignment.data_dir)
            assignment.sandbox = self.backend.spawn(sandbox, argv)
            assignment.state = "running"
            assignment.last_hb = None
            self._hb_by_stream[assignment.hb_stream] = name
            self._emit("started", name, sandbox_id=assignment.sandbox.sandbox_id)

    def _await_first_heartbeats(self):
        deadline = time.monotonic() + STARTUP_HEARTBEAT_WINDOW_S
        while time.monotonic() < deadline:
            self.loop.step(0.05)
            pending = False
            for name, a in self.plan.assignments.items():
                if a.state != "running" or a.last_hb is not None:
                    continue
                if a.sandbox is not None and not self.backend.is_alive(a.sandbox):
                    a.state = "failed"
                    self._emit("failed", name, detail="exited during startup")
                else:
                    pending = True
            if not pending:
                return
        for name, a in sorted(self.plan.assignments.items()):
            if a.state == "running" and a.last_hb is None:
                a.state = "failed"
                self._emit("failed", name, detail="no startup heartbeat")

    def _abort_all(self):
        with self._lock:
            for assignment in self.plan.assignments.values():
                if assignment.sandbox is not None:
                    self.backend.signal_stop(assignment.sandbox)
                    assignment.state = "stopped"

    # -- heartbeats and supervision ----------------------------------------

    def _on_heartbeat(self, msg):
        if msg.msg_type != MsgType.HEARTBEAT:
            return
        name = self._hb_by_stream.get(msg.stream_id)
        if name is None:
            return
        assignment = self.plan.assignments.get(name)
        if assignment is None:
            return
        assignment.last_hb = time.monotonic()
        if assignment.state == "restarting":
            assignment.state = "running"

    def _supervise_loop(self):
        check_every = 0.05
        next_check = time.monotonic()
        while not self._stop:
            self.loop.step(check_every)
            now = time.monotonic()
            if now >= next_check:
                self._check_health(now)
                next_check = now + check_every

    def _check_health(self, now: float):
        with self._lock:
            for name, a in list(self.plan.assignments.items()):
                if a.state == "failed":
                    # Left over from a startup failure: restarts apply here
                    # too, bounded by the same budget.
                    self._maybe_restart(name, a, now)
                    continue
                if a.state not in ("running", "restarting"):
                    continue
                reason = None
                if a.sandbox is not None and not self.backend.is_alive(a.sandbox):
                    reason = "sandbox exited"
                elif a.state == "running" and a.last_hb is not None:
                    if (now - a.last_hb) * 1000.0 > a.manifest.timeout_ms:
                        reason = "heartbeat lost"
                elif a.state == "restarting" and a.last_hb is None:
                    # waiting for the post-restart heartbeat
                    if now - a.restart_times[-1] > STARTUP_HEARTBEAT_WINDOW_S:
                        reason = "no heartbeat after restart"
                if reason is None:
                    continue
                a.state = "failed"
                self._emit("failed", name, detail=reason,
                           sandbox_id=a.sandbox.sandbox_id if a.sandbox else "")
                self._maybe_restart(name, a, now)

    def _maybe_restart(self, name: str, a: ModuleAssignment, now: float):
        while a.restart_times and now - a.restart_times[0] > RESTART_WINDOW_S:
            a.restart_times.popleft()
        if len(a.restart_times) >= RESTART_BUDGET:
            a.state = "stopped"
            if a.sandbox is not None:
                self.backend.signal_stop(a.sandbox)
            self._emit("stopped", name, detail="restart budget exhausted")
            return
        if a.sandbox is not None:
            self.backend.signal_stop(a.sandbox)
        a.restart_times.append(now)
        a.state = "restarting"
        a.last_hb = None
        # Same data dir, fresh sandbox.
        a.incarnation += 1
        sandbox = self.backend.stage(name, a.incarnation, a.source_dir)
        argv = _resolve_entry(a.manifest.entry, sandbox, a.data_dir)
        try:
            a.sandbox = self.backend.spawn(sandbox, argv)
        except DeploymentError as exc:
            a.state = "failed"
            self._emit("failed", name, detail=f"respawn failed: {exc}")
            return
        self._emit("restarted", name, sandbox_id=a.sandbox.sandbox_id)

    # -- dynamic deployment -------------------------------------------------

    def apply_delta(self, module_dirs: Iterable[Union[str, Path]]) -> dict:
        """Integrate new modules into the running deployment.

        Existing sandboxes are untouched; consumers that gain an input edge
        get their endpoints file rewritten and pick the connection up live.
        Returns a report with the new edges and sandbox ids.
        """
        new_modules = [load_module_dir(p) for p in module_dirs]
        if not new_modules:
            return {"added": [], "new_edges": [], "sandboxes": {}}
        with self._lock:
            plan = self.plan
            extended, delta = extend_blueprint(plan.blueprint,
                                               [m for m, _ in new_modules])
            bound = bind_extension(plan.bound, extended, delta)
            new_names = {m.name for m, _ in new_modules}
            sources = {m.name: d for m, d in new_modules}

            assignments = plan.assignments
            plan.bound = bound
            hb = plan.next_hb_stream
            created: list[ModuleAssignment] = []
            for name in sorted(new_names):
                manifest = extended.manifest(name)
                endpoints = _module_endpoints(name, manifest, bound, plan.host,
                                              plan.supervisor_port, hb)
                assignment = ModuleAssignment(
                    manifest=manifest, source_dir=sources[name],
                    data_dir=plan.root / "modules" / name / "data",
                    endpoints=endpoints, hb_stream=hb)
                assignments[name] = assignment
                created.append(assignment)
                hb += 1
            plan.next_hb_stream = hb

            # Rewrite endpoint files of existing consumers that gained edges.
            touched = {e.consumer for e in delta if e.consumer not in new_names}
            for name in sorted(touched):
                a = assignments[name]
                a.endpoints = _module_endpoints(
                    name, a.manifest, bound, plan.host, plan.supervisor_port,
                    a.hb_stream)
                (a.data_dir / ENDPOINTS_FILE).write_text(a.endpoints.to_json())

            spawned = {}
            try:
                for assignment in created:
                    self._stage_and_spawn(assignment, fresh_data=True)
                    spawned[assignment.manifest.name] = assignment.sandbox.sandbox_id
            except Exception:
                for assignment in created:
                    if assignment.sandbox is not None:
                        self.backend.signal_stop(assignment.sandbox)
                    assignments.pop(assignment.manifest.name, None)
                raise
        self._emit("delta-applied", detail=",".join(sorted(new_names)))
        return {
            "added": sorted(new_names),
            "new_edges": [dataclasses.asdict(e) | {"topic": e.topic.value}
                          for e in delta],
            "sandboxes": spawned,
        }

    # -- config hot reload ---------------------------------------------------

    def attach_debug_endpoint(self, host: str, port: int):
        """Subscribe to simulator config pushes and rebuild the HAL set."""
        from .netio import InputConnection

        def on_push(conn, msg):
            if msg.msg_type != MsgType.CONFIG_PUSH:
                return
            try:
                self.apply_config(msg.payload.document())
            except Exception:
                log.exception("config push rejected")

        self._debug_sub = InputConnection(self.loop, "debug-endpoint", host,
                                          port, None, 0, on_push)
        # The supervisor loop will keep ticking the connection.
        ticker = self._debug_sub

        def tick_forever():
            while not self._stop:
                ticker.tick(time.monotonic())
                time.sleep(0.1)

        threading.Thread(target=tick_forever, daemon=True).start()

    def apply_config(self, document: str) -> dict:
        """Adopt a new vehicle configuration: add HAL modules for new devices
        and stop HAL modules whose devices disappeared."""
        from .config import parse_vehicle_config
        new_cfg = parse_vehicle_config(document)
        with self._lock:
            plan = self.plan
            current_hal = {n for n, a in plan.assignments.items()
                           if n.startswith("hal_")}
            new_specs = {spec.name: spec for spec in build_hal(new_cfg)}
            plan.vehicle_cfg = new_cfg
            added = sorted(set(new_specs) - current_hal)
            removed = sorted(current_hal - set(new_specs))

            for name in removed:
                a = plan.assignments.pop(name)
                if a.sandbox is not None:
                    self.backend.signal_stop(a.sandbox)
                self._hb_by_stream.pop(a.hb_stream, None)
                self._emit("stopped", name, detail="device removed by config push")

            if added:
                extended, delta = extend_blueprint(
                    plan.blueprint, [new_specs[n].manifest() for n in added])
                bound = bind_extension(plan.bound, extended, delta)
                plan.bound = bound
                hb = plan.next_hb_stream
                for name in added:
                    manifest = extended.manifest(name)
                    endpoints = _module_endpoints(name, manifest, bound,
                                                  plan.host,
                                                  plan.supervisor_port, hb)
                    assignment = ModuleAssignment(
                        manifest=manifest, source_dir=None,
                        data_dir=plan.root / "modules" / name / "data",
                        endpoints=endpoints, hb_stream=hb)
                    plan.assignments[name] = assignment
                    hb += 1
                    self._stage_and_spawn(assignment, fresh_data=True)
                plan.next_hb_stream = hb
        self._emit("config-applied",
                   detail=f"added={','.join(added)} removed={','.join(removed)}")
        return {"added": added, "removed": removed}

    # -- control socket -------------------------------------------------------

    def _open_control_socket(self):
        path = self.plan.root / "control.sock"
        if len(str(path)) > 100:
            path = Path(f"/tmp/autoframe-{os.getpid()}.sock")
        if path.exists():
            path.unlink()
        srv = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
        srv.bind(str(path))
        srv.listen(4)
        srv.setblocking(False)
        self._control = srv
        self.control_path = path
        (self.plan.root / "control.path").write_text(str(path) + "\n")
        self.loop.add(srv, selectors.EVENT_READ, self._control_accept)

    def _control_accept(self, mask):
        try:
            conn, _ = self._control.accept()
        except OSError:
            return
        conn.settimeout(5.0)
        threading.Thread(target=self._serve_control, args=(conn,),
                         daemon=True).start()

    def _serve_control(self, conn: socket.socket):
        try:
            buf = b""
            while b"\n" not in buf:
                chunk = conn.recv(65536)
                if not chunk:
                    return
                buf += chunk
            request = json.loads(buf.decode("utf-8"))
            response = self._handle_control(request)
            conn.sendall((json.dumps(response) + "\n").encode("utf-8"))
        except Exception as exc:
            try:
                conn.sendall((json.dumps({"error": str(exc)}) + "\n").encode())
            except OSError:
                pass
        finally:
            conn.close()

    def _handle_control(self, request: dict) -> dict:
        cmd = request.get("cmd")
        if cmd == "status":
            return self.status()
        if cmd == "add-module":
            try:
                return self.apply_delta([request["path"]])
            except (BlueprintError, DeploymentError, OSError, ValueError) as exc:
                kind = getattr(exc, "kind", "error")
                return {"error": str(exc), "kind": kind}
        if cmd == "stop":
            threading.Thread(target=self.stop, daemon=True).start()
            return {"stopping": True}
        return {"error": f"unknown command {cmd!r}"}

    def status(self) -> dict:
        with self._lock:
            modules = []
            for name, a in sorted(self.plan.assignments.items()):
                entry = {
                    "name": name,
                    "state": a.state,
                    "sandbox_id": a.sandbox.sandbox_id if a.sandbox else None,
                    "pid": a.sandbox.pid if a.sandbox else None,
                    "restarts": len(a.restart_times),
                }
                status_file = a.data_dir / STATUS_FILE
                if status_file.exists():
                    try:
                        doc = json.loads(status_file.read_text())
                        entry["phase"] = doc.get("phase")
                        entry["timed_out_inputs"] = doc.get("timed_out_inputs", [])
                        entry["errors"] = doc.get("errors", {})
                    except (OSError, ValueError):
                        pass
                modules.append(entry)
            return {
                "model": self.plan.vehicle_cfg.model_name,
                "control_socket": str(self.control_path),
                "supervisor_port": self.plan.supervisor_port,
                "modules": modules,
            }

    # -- shutdown -------------------------------------------------------------

    def stop(self):
        """Stop everything; safe to call more than once."""
        with self._lock:
            if self._stop:
                return
            self._stop = True
        if self._thread is not None:
            self.loop.wake()
            self._thread.join(timeout=5.0)
        with self._lock:
            for name, a in sorted(self.plan.assignments.items()):
                if a.sandbox is not None and a.state != "stopped":
                    self.backend.signal_stop(a.sandbox)
                    a.state = "stopped"
                    self._emit("stopped", name)
        if self._control is not None:
            try:
                self._control.close()
            except OSError:
                pass
            if self.control_path and self.control_path.exists():
                self.control_path.unlink()
        self.loop.close()


def deploy(plan: DeploymentPlan, backend: ExecutorBackend) -> Deployment:
    """Spawn and supervise a staged plan; returns the running deployment."""
    return Deployment(plan, backend).start()


def supervise(deployment: Deployment, timeout: Optional[float] = None):
    """Yield health events as they happen (generator form of the event queue)."""
    while True:
        try:
            yield deployment.events.get(timeout=timeout)
        except queue.Empty:
            return


def control_request(root_or_socket: Union[str, Path], request: dict,
                    timeout: float = 30.0) -> dict:
    """Send one JSON request to a deployment's control socket."""
    path = Path(root_or_socket)
    if path.is_dir():
        pointer = path / "control.path"
        path = Path(pointer.read_text().strip()) if pointer.exists() \
            else path / "control.sock"
    conn = socket.socket(socket.AF_UNIX, socket.SOCK_STREAM)
    conn.settimeout(timeout)
    try:
        conn.connect(str(path))
        conn.sendall((json.dumps(request) + "\n").encode("utf-8"))
        buf = b""
        while b"\n" not in buf:
            chunk = conn.recv(65536)
            if not chunk:
                break
            buf += chunk
        return json.loads(buf.decode("utf-8"))
    finally:
        conn.close()
