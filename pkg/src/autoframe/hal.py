"""Hardware abstraction layer: one adapter module per configured device.

Sensor adapters connect out to the device endpoint named in the vehicle
configuration, decode device frames, and republish them untouched on
their output topic.  Actuator adapters receive unified commands from the
dataflow, validate them against the actuator's limits, and forward the
result to the device endpoint.  Both run inside the ordinary module
frame, so they heartbeat and restart like any other module.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Union

from .config import ActuatorKind, ActuatorSpec, SensorKind, SensorSpec, VehicleConfig
from .frame import ModuleFrame, ModuleManifest, PortDecl
from .netio import OutboundSender
from .wire import (
    CommandPayload,
    DisplayFrame,
    Message,
    SteeringCommand,
    TopicType,
)

log = logging.getLogger(__name__)

SENSOR_TOPICS = {
    SensorKind.RGB_CAMERA: TopicType.IMAGE_RGB,
    SensorKind.DEPTH_CAMERA: TopicType.IMAGE_DEPTH,
    SensorKind.VEHICLE_STATE: TopicType.VEHICLE_STATE,
}
ACTUATOR_TOPICS = {
    ActuatorKind.STEERING: TopicType.STEERING_CMD,
    ActuatorKind.DISPLAY: TopicType.DISPLAY_FRAME,
}

HAL_TIMEOUT_MS = 500
_DISPLAY_MAX_DIM = 8192


class CommandRejected(ValueError):
    pass


@dataclass(frozen=True)
class HalModuleSpec:
    name: str
    direction: str  # "sensor" | "actuator"
    device: Union[SensorSpec, ActuatorSpec]
    topic: TopicType

    def manifest(self) -> ModuleManifest:
        entry = ("{python}", "-m", "autoframe.apps.hal_adapter")
        if self.direction == "sensor":
            ports = dict(outputs=(PortDecl(self.topic),))
        else:
            # Optional input: an actuator nobody commands yet simply idles
            # (the display actuator waits for the visualizer to be added).
            ports = dict(inputs=(PortDecl(self.topic, required=False),))
        return ModuleManifest(
            name=self.name, timeout_ms=HAL_TIMEOUT_MS, entry=entry,
            config_hook="autoframe.hal:create_adapter_config", **ports)


def build_hal(cfg: VehicleConfig) -> list[HalModuleSpec]:
    """One HAL module spec per configured device, in configuration order."""
    specs = [
        HalModuleSpec(f"hal_{s.name}", "sensor", s, SENSOR_TOPICS[s.kind])
        for s in cfg.sensors
    ]
    specs += [
        HalModuleSpec(f"hal_{a.name}", "actuator", a, ACTUATOR_TOPICS[a.kind])
        for a in cfg.actuators
    ]
    return specs


def validate_command(spec: ActuatorSpec, cmd: CommandPayload) -> CommandPayload:
    """Enforce actuator limits on a command before it reaches the device.

    Steering angles are clamped into the configured range (fail-operational:
    the vehicle stays controllable and the clamp is logged); non-finite
    angles and kind mismatches are rejected outright.
    """
    if spec.kind is ActuatorKind.STEERING:
        if not isinstance(cmd, SteeringCommand):
            raise CommandRejected(
                f"{spec.name}: expected a steering command, got {type(cmd).__name__}")
        if not math.isfinite(cmd.angle):
            raise CommandRejected(f"{spec.name}: non-finite steering angle")
        max_angle = spec.limits["max_angle"]
        if abs(cmd.angle) > max_angle:
            clamped = max(-max_angle, min(max_angle, cmd.angle))
            log.warning("%s: steering %.4f rad clamped to %.4f", spec.name,
                        cmd.angle, clamped)
            return SteeringCommand(clamped)
        return cmd
    if spec.kind is ActuatorKind.DISPLAY:
        if not isinstance(cmd, DisplayFrame):
            raise CommandRejected(
                f"{spec.name}: expected a display frame, got {type(cmd).__name__}")
        img = cmd.image
        if img.validate() or not (1 <= img.width <= _DISPLAY_MAX_DIM
                                  and 1 <= img.height <= _DISPLAY_MAX_DIM):
            raise CommandRejected(f"{spec.name}: display frame fails dimension sanity")
        return cmd
    raise CommandRejected(f"{spec.name}: unsupported actuator kind {spec.kind}")


class SensorAdapter:
    """Frame handler bridging a device capture stream onto a topic."""

    DEVICE_PORT = "device"

    def __init__(self, device: SensorSpec, topic: TopicType):
        self.device = device
        self.topic = topic

    def on_start(self, frame: ModuleFrame):
        conn = self.device.connection
        frame.add_source(self.DEVICE_PORT, conn.address, conn.port, self.topic)

    def process(self, port, payload, t_us):
        if port != self.DEVICE_PORT:
            return []
        # Pass-through: same payload object, so the bytes cannot change.
        return [(self.topic.value, payload)]


class ActuatorAdapter:
    """Frame handler validating commands and forwarding them to the device."""

    def __init__(self, device: ActuatorSpec, topic: TopicType):
        self.device = device
        self.topic = topic
        conn = device.connection
        self.sink = OutboundSender(f"hal_{device.name}.device", conn.address, conn.port)
        self.rejected = 0
        self.clamped = 0

    def on_tick(self, now: float):
        self.sink.tick(now)

    def process(self, port, payload, t_us):
        try:
            validated = validate_command(self.device, payload)
        except CommandRejected as exc:
            self.rejected += 1
            log.warning("command rejected: %s", exc)
            return []
        if isinstance(validated, SteeringCommand) and validated is not payload:
            self.clamped += 1
        self.sink.send(Message.of(validated, 0, t_us))
        return []

    def on_stop(self):
        self.sink.close()


def adapter_for(direction: str, device: Union[SensorSpec, ActuatorSpec],
                topic: TopicType):
    if direction == "sensor":
        return SensorAdapter(device, topic)
    return ActuatorAdapter(device, topic)


def create_adapter_config(manifest: ModuleManifest, cfg: VehicleConfig) -> dict:
    """Configuration-creation hook for generated HAL modules: stages the
    device excerpt the generic adapter runtime needs."""
    device_name = manifest.name.removeprefix("hal_")
    for s in cfg.sensors:
        if s.name == device_name:
            return {
                "direction": "sensor",
                "topic": SENSOR_TOPICS[s.kind].value,
                "device": _sensor_doc(s),
            }
    for a in cfg.actuators:
        if a.name == device_name:
            return {
                "direction": "actuator",
                "topic": ACTUATOR_TOPICS[a.kind].value,
                "device": _actuator_doc(a),
            }
    from .config import ConfigError
    raise ConfigError(f"no device named {device_name!r} in the vehicle config",
                      path="sensors")


def _conn_doc(c):
    return {"device_name": c.device_name, "manufacturer": c.manufacturer,
            "protocol": c.protocol, "address": c.address, "port": c.port}


def _sensor_doc(s: SensorSpec) -> dict:
    return {"name": s.name, "kind": s.kind.value,
            "pose": {"position": list(s.pose.position),
                     "orientation": list(s.pose.orientation)},
            "params": s.params, "connection": _conn_doc(s.connection)}


def _actuator_doc(a: ActuatorSpec) -> dict:
    return {"name": a.name, "kind": a.kind.value, "limits": a.limits,
            "connection": _conn_doc(a.connection)}


def adapter_from_params(params: dict):
    """Rebuild the adapter handler from staged config parameters."""
    from .config import _parse_actuator, _parse_sensor
    direction = params["direction"]
    topic = TopicType(params["topic"])
    if direction == "sensor":
        device = _parse_sensor(params["device"], "device")
    else:
        device = _parse_actuator(params["device"], "device")
    return adapter_for(direction, device, topic)
