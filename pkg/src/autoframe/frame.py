"""The standardized frame wrapping every application module.

A frame owns the module's connections (inputs connect out to producers,
outputs listen for subscribers), validates every message against its port's
topic on the way in (C_in) and out (C_out), dispatches the processing
handler, forwards accepted outputs, heartbeats to the supervisor at half
the module timeout, and runs a watchdog over required-input recency.

Handlers are either plain callables ``(port, payload, timestamp_us) ->
iterable of (output_port, payload)`` or objects with a ``process`` method
of that shape; optional ``on_start(frame)``, ``on_tick(now)`` and
``on_error(exc)`` hooks let device adapters manage their own connections.
A handler that raises is counted and skipped; the frame itself stays
alive.  The frame re-reads its endpoints file when it changes so that a
dynamic deployment can hand new input edges to a running module without
restarting it.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .netio import InputConnection, Loop, OutboundSender, Publisher
from .wire import Heartbeat, Message, MsgType, TopicType, payload_matches_topic

log = logging.getLogger(__name__)

ENDPOINTS_FILE = "endpoints.json"
CONFIG_FILE = "config.json"
STATUS_FILE = "status.json"


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class PortDecl:
    topic: TopicType
    name: str = ""
    required: bool = True           # consumers only
    source: Optional[str] = None    # producer-name qualifier, consumers only

    def __post_init__(self):
        if not self.name:
            object.__setattr__(self, "name", self.topic.value)


@dataclass(frozen=True)
class ModuleManifest:
    name: str
    inputs: tuple[PortDecl, ...] = ()
    outputs: tuple[PortDecl, ...] = ()
    timeout_ms: int = 500
    external_ports: tuple[int, ...] = ()
    entry: tuple[str, ...] = ()
    config_hook: Optional[str] = None

    def __post_init__(self):
        if not self.name:
            raise ManifestError("module name must not be empty")
        if self.timeout_ms <= 0:
            raise ManifestError(f"{self.name}: timeout_ms must be positive")
        for ports, kind in ((self.inputs, "input"), (self.outputs, "output")):
            names = [p.name for p in ports]
            if len(set(names)) != len(names):
                raise ManifestError(f"{self.name}: duplicate {kind} port names")

    @classmethod
    def from_json(cls, text: str) -> "ModuleManifest":
        doc = json.loads(text)
        try:
            inputs = tuple(
                PortDecl(TopicType(p["topic"]), p.get("name", ""),
                         bool(p.get("required", True)), p.get("source"))
                for p in doc.get("inputs", ()))
            outputs = tuple(
                PortDecl(TopicType(p["topic"]), p.get("name", ""))
                for p in doc.get("outputs", ()))
            return cls(
                name=doc["name"],
                inputs=inputs,
                outputs=outputs,
                timeout_ms=int(doc.get("timeout_ms", 500)),
                external_ports=tuple(int(p) for p in doc.get("external_ports", ())),
                entry=tuple(doc.get("entry", ())),
                config_hook=doc.get("config_hook"),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest missing field {exc}") from None
        except ValueError as exc:
            raise ManifestError(str(exc)) from None

    def to_json(self) -> str:
        return json.dumps({
            "name": self.name,
            "inputs": [
                {"name": p.name, "topic": p.topic.value, "required": p.required,
                 **({"source": p.source} if p.source else {})}
                for p in self.inputs],
            "outputs": [{"name": p.name, "topic": p.topic.value} for p in self.outputs],
            "timeout_ms": self.timeout_ms,
            "external_ports": list(self.external_ports),
            "entry": list(self.entry),
            **({"config_hook": self.config_hook} if self.config_hook else {}),
        }, indent=2) + "\n"

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModuleManifest":
        return cls.from_json(Path(path).read_text())


@dataclass(frozen=True)
class BoundInput:
    port: str
    topic: TopicType
    host: str
    tcp_port: int
    stream_id: int
    required: bool = True


@dataclass(frozen=True)
class BoundOutput:
    port: str
    topic: TopicType
    host: str
    tcp_port: int
    streams: tuple[tuple[str, int], ...] = ()  # (consumer, stream_id), informational


@dataclass(frozen=True)
class HeartbeatEndpoint:
    host: str
    tcp_port: int
    stream_id: int


@dataclass(frozen=True)
class ModuleEndpoints:
    module: str
    timeout_ms: int
    inputs: tuple[BoundInput, ...] = ()
    outputs: tuple[BoundOutput, ...] = ()
    heartbeat: Optional[HeartbeatEndpoint] = None

    def to_json(self) -> str:
        doc = {
            "module": self.module,
            "timeout_ms": self.timeout_ms,
            "inputs": [
                {"port": i.port, "topic": i.topic.value, "host": i.host,
                 "tcp_port": i.tcp_port, "stream_id": i.stream_id,
                 "required": i.required}
                for i in self.inputs],
            "outputs": [
                {"port": o.port, "topic": o.topic.value, "host": o.host,
                 "tcp_port": o.tcp_port,
                 "streams": [{"consumer": c, "stream_id": s} for c, s in o.streams]}
                for o in self.outputs],
        }
        if self.heartbeat:
            doc["heartbeat"] = {"host": self.heartbeat.host,
                                "tcp_port": self.heartbeat.tcp_port,
                                "stream_id": self.heartbeat.stream_id}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ModuleEndpoints":
        doc = json.loads(text)
        hb = doc.get("heartbeat")
        return cls(
            module=doc["module"],
            timeout_ms=int(doc["timeout_ms"]),
            inputs=tuple(
                BoundInput(i["port"], TopicType(i["topic"]), i["host"],
                           int(i["tcp_port"]), int(i["stream_id"]),
                           bool(i.get("required", True)))
                for i in doc.get("inputs", ())),
            outputs=tuple(
                BoundOutput(o["port"], TopicType(o["topic"]), o["host"],
                            int(o["tcp_port"]),
                            tuple((s["consumer"], int(s["stream_id"]))
                                  for s in o.get("streams", ())))
                for o in doc.get("outputs", ())),
            heartbeat=HeartbeatEndpoint(hb["host"], int(hb["tcp_port"]),
                                        int(hb["stream_id"])) if hb else None,
        )

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ModuleEndpoints":
        return cls.from_json(Path(path).read_text())


class FramePhase(str, Enum):
    INITIALIZING = "initializing"
    RUNNING = "running"
    DEGRADED = "degraded"
    STOPPED = "stopped"


_ALLOWED_TRANSITIONS = {
    FramePhase.INITIALIZING: {FramePhase.RUNNING, FramePhase.STOPPED},
    FramePhase.RUNNING: {FramePhase.DEGRADED, FramePhase.STOPPED},
    FramePhase.DEGRADED: {FramePhase.RUNNING, FramePhase.STOPPED},
    FramePhase.STOPPED: set(),
}


@dataclass
class FrameState:
    phase: FramePhase = FramePhase.INITIALIZING
    last_input_us: dict[str, int] = field(default_factory=dict)
    error_count: dict[str, int] = field(default_factory=dict)

    def transition(self, new: FramePhase):
        if new == self.phase:
            return
        if new not in _ALLOWED_TRANSITIONS[self.phase]:
            raise RuntimeError(f"illegal phase transition {self.phase.value} -> {new.value}")
        self.phase = new

    def count(self, category: str, n: int = 1):
        self.error_count[category] = self.error_count.get(category, 0) + n


@dataclass(frozen=True)
class WatchdogVerdict:
    timed_out: tuple[str, ...] = ()

    @property
    def healthy(self) -> bool:
        return not self.timed_out


def watchdog_check(state: FrameState, now_us: int, timeout_ms: int,
                   required: Optional[Iterable[str]] = None) -> WatchdogVerdict:
    """Flag required inputs silent for longer than the timeout.

    ``required`` limits the check to those input names; by default every
    tracked input is treated as required.  Idempotent: no state changes.
    """
    names = list(required) if required is not None else list(state.last_input_us)
    late = tuple(
        name for name in names
        if now_us - state.last_input_us.get(name, 0) > timeout_ms * 1000)
    return WatchdogVerdict(timed_out=late)


Handler = Union[Callable[[str, object, int], Iterable[tuple[str, object]]], object]


class ModuleFrame:
    """Live runtime for one module; single-threaded selector loop."""

    def __init__(self, manifest: ModuleManifest, handler: Handler,
                 endpoints: ModuleEndpoints, data_dir: Optional[Path] = None):
        self.manifest = manifest
        self.handler = handler
        self.endpoints = endpoints
        self.data_dir = Path(data_dir) if data_dir else None
        self.loop = Loop()
        self.state = FrameState()
        self.timeout_ms = endpoints.timeout_ms
        self._stop = False
        self._process = getattr(handler, "process", handler)
        self._inputs: dict[str, InputConnection] = {}
        self._bound_inputs: dict[str, BoundInput] = {}
        self._publishers: dict[str, Publisher] = {}
        self._out_topics: dict[str, TopicType] = {}
        self._heartbeat: Optional[OutboundSender] = None
        self._hb_stream = 0
        self._last_sim_ts = 0
        self._last_in_ts: dict[str, int] = {}
        self._endpoints_mtime: Optional[float] = None
        self.started_monotonic = time.monotonic()

    # -- wiring ---------------------------------------------------------

    def _setup(self):
        for out in self.endpoints.outputs:
            self._publishers[out.port] = Publisher(
                self.loop, f"{self.manifest.name}.{out.port}", out.host, out.tcp_port)
            self._out_topics[out.port] = out.topic
        for decl in self.manifest.outputs:
            self._out_topics.setdefault(decl.name, decl.topic)
        for bound in self.endpoints.inputs:
            self._add_input(bound)
        if self.endpoints.heartbeat:
            hb = self.endpoints.heartbeat
            self._heartbeat = OutboundSender(
                f"{self.manifest.name}.hb", hb.host, hb.tcp_port)
            self._hb_stream = hb.stream_id
        if self.data_dir:
            try:
                self._endpoints_mtime = (self.data_dir / ENDPOINTS_FILE).stat().st_mtime
            except OSError:
                self._endpoints_mtime = None
        if hasattr(self.handler, "on_start"):
            self.handler.on_start(self)

    def _add_input(self, bound: BoundInput):
        now_us = int(time.monotonic() * 1e6)
        self._bound_inputs[bound.port] = bound
        self.state.last_input_us.setdefault(bound.port, now_us)
        conn = InputConnection(
            self.loop, f"{self.manifest.name}.{bound.port}", bound.host,
            bound.tcp_port, bound.topic, bound.stream_id,
            lambda conn, msg, port=bound.port: self._on_input(port, msg),
            on_error=lambda _category: self.state.count("c_in"))
        self._inputs[bound.port] = conn

    def add_source(self, name: str, host: str, port: int, topic: TopicType,
                   stream_id: int = 0):
        """Attach a non-blueprint data source (a HAL device connection).

        Source messages run through the same input validation and handler
        dispatch as regular inputs but are exempt from the watchdog's
        required set.
        """
        conn = InputConnection(
            self.loop, f"{self.manifest.name}.{name}", host, port, topic,
            stream_id, lambda conn, msg, p=name: self._on_input(p, msg, source=True),
            on_error=lambda _category: self.state.count("c_in"))
        self._inputs[name] = conn
        return conn

    # -- message path ---------------------------------------------------

    def _on_input(self, port: str, msg: Message, source: bool = False):
        if msg.msg_type == MsgType.HEARTBEAT:
            return
        bound = self._bound_inputs.get(port)
        topic = bound.topic if bound else self._inputs[port].topic
        problems = payload_matches_topic(msg.payload, topic)
        last = self._last_in_ts.get(port)
        if last is not None and msg.timestamp_us < last:
            problems.append("timestamp regression")
        if problems:
            self.state.count("c_in")
            return
        self._last_in_ts[port] = msg.timestamp_us
        self._last_sim_ts = max(self._last_sim_ts, msg.timestamp_us)
        self.state.last_input_us[port] = int(time.monotonic() * 1e6)
        try:
            outputs = self._process(port, msg.payload, msg.timestamp_us)
        except Exception as exc:
            self.state.count("handler")
            if hasattr(self.handler, "on_error"):
                try:
                    self.handler.on_error(exc)
                except Exception:
                    log.exception("error hook failed")
            else:
                log.warning("%s handler failed on %s: %r", self.manifest.name, port, exc)
            return
        for out_port, payload in outputs or ():
            self.emit(out_port, payload, msg.timestamp_us)

    def emit(self, out_port: str, payload, timestamp_us: int) -> bool:
        """C_out check and forward; returns False when suppressed."""
        topic = self._out_topics.get(out_port)
        problems = (["unknown output port"] if topic is None
                    else payload_matches_topic(payload, topic))
        if problems:
            self.state.count("c_out")
            return False
        pub = self._publishers.get(out_port)
        if pub is not None:
            pub.publish(payload, timestamp_us)
        return True

    # -- periodic work ----------------------------------------------------

    def _reload_endpoints(self):
        path = self.data_dir / ENDPOINTS_FILE
        try:
            mtime = path.stat().st_mtime
        except OSError:
            return
        if self._endpoints_mtime is not None and mtime == self._endpoints_mtime:
            return
        self._endpoints_mtime = mtime
        try:
            latest = ModuleEndpoints.load(path)
        except (ValueError, OSError) as exc:
            log.warning("%s: unreadable endpoints file: %r", self.manifest.name, exc)
            return
        for bound in latest.inputs:
            if bound.port not in self._bound_inputs:
                log.info("%s: new input %s from endpoints reload",
                         self.manifest.name, bound.port)
                self._add_input(bound)

    def required_ports(self) -> list[str]:
        return [b.port for b in self._bound_inputs.values() if b.required]

    def _write_status(self, verdict: WatchdogVerdict):
        if not self.data_dir:
            return
        doc = {
            "module": self.manifest.name,
            "pid": os.getpid(),
            "phase": self.state.phase.value,
            "errors": dict(self.state.error_count),
            "timed_out_inputs": list(verdict.timed_out),
            "inputs_connected": {n: c.connected for n, c in self._inputs.items()},
            "heartbeat_connected": bool(self._heartbeat and self._heartbeat.connected),
            "updated": time.time(),
        }
        tmp = self.data_dir / (STATUS_FILE + ".tmp")
        try:
            tmp.write_text(json.dumps(doc, indent=2))
            os.replace(tmp, self.data_dir / STATUS_FILE)
        except OSError:
            pass

    # -- main loop --------------------------------------------------------

    def run(self):
        self._setup()
        self.state.transition(FramePhase.RUNNING)
        hb_interval = self.timeout_ms / 2000.0
        wd_interval = min(self.timeout_ms / 4000.0, 0.1)
        now = time.monotonic()
        next_hb = now  # first heartbeat immediately: the supervisor waits on it
        next_wd = now + wd_interval
        try:
            while not self._stop:
                now = time.monotonic()
                if now >= next_hb:
                    self._send_heartbeat(now)
                    next_hb = now + hb_interval
                if now >= next_wd:
                    self._periodic(now)
                    next_wd = now + wd_interval
                for conn in self._inputs.values():
                    conn.tick(now)
                if hasattr(self.handler, "on_tick"):
                    self.handler.on_tick(now)
                timeout = max(0.0, min(next_hb, next_wd) - time.monotonic())
                self.loop.step(timeout)
        finally:
            self.state.transition(FramePhase.STOPPED)
            self._write_status(WatchdogVerdict())
            if hasattr(self.handler, "on_stop"):
                try:
                    self.handler.on_stop()
                except Exception:
                    log.exception("stop hook failed")
            if self._heartbeat:
                self._heartbeat.close()
            self.loop.close()

    def _send_heartbeat(self, now: float):
        if self._heartbeat is None:
            return
        self._heartbeat.tick(now)
        self._heartbeat.send(
            Message.of(Heartbeat(), self._hb_stream, self._last_sim_ts))

    def _periodic(self, now: float):
        if self.data_dir:
            self._reload_endpoints()
        verdict = watchdog_check(self.state, int(now * 1e6), self.timeout_ms,
                                 self.required_ports())
        if self.state.phase == FramePhase.RUNNING and not verdict.healthy:
            self.state.transition(FramePhase.DEGRADED)
        elif self.state.phase == FramePhase.DEGRADED and verdict.healthy:
            self.state.transition(FramePhase.RUNNING)
        self._write_status(verdict)

    def stop(self):
        self._stop = True
        self.loop.wake()


def run_frame(manifest: ModuleManifest, handler: Handler,
              endpoints: ModuleEndpoints, data_dir: Optional[Path] = None):
    """Run a module frame until stop; the normal module entry point."""
    ModuleFrame(manifest, handler, endpoints, data_dir=data_dir).run()


def read_staged_params(data_dir: Union[str, Path]) -> dict:
    """Module parameters staged by the deployment's config-creation hook."""
    path = Path(data_dir) / CONFIG_FILE
    if not path.exists():
        return {}
    doc = json.loads(path.read_text())
    return doc.get("params", {})


def frame_from_data_dir(data_dir: Union[str, Path], handler: Handler) -> ModuleFrame:
    """Build a frame purely from a staged data directory.

    The endpoints file carries everything the frame needs (ports, topics,
    timeout, heartbeat); the manifest is reconstructed from it.
    """
    data_dir = Path(data_dir)
    endpoints = ModuleEndpoints.load(data_dir / ENDPOINTS_FILE)
    manifest = ModuleManifest(
        name=endpoints.module,
        inputs=tuple(PortDecl(b.topic, b.port, b.required) for b in endpoints.inputs),
        outputs=tuple(PortDecl(o.topic, o.port) for o in endpoints.outputs),
        timeout_ms=endpoints.timeout_ms,
    )
    return ModuleFrame(manifest, handler, endpoints, data_dir=data_dir)
