"""Vehicle configuration: parsing, validation, and the shared fixture vehicle.

The configuration is a UTF-8 JSON document with top-level keys ``model``,
``physical``, ``sensors`` and ``actuators`` (see ``docs/vehicle-config.md``).
All angles are radians except camera ``fov_deg``, which follows the usual
camera vocabulary.  Parsed configurations are frozen and safe to share
across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Optional


class ConfigError(ValueError):
    """Raised when a configuration document cannot be accepted.

    ``path`` points at the offending field (``actuators[0].connection.port``)
    and ``rule`` names the violated invariant when one applies.
    """

    def __init__(self, problem: str, path: str = "", rule: Optional[str] = None):
        self.problem = problem
        self.path = path
        self.rule = rule
        detail = f"{path}: {problem}" if path else problem
        if rule:
            detail += f" [rule: {rule}]"
        super().__init__(detail)


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    message: str


class SensorKind(str, Enum):
    RGB_CAMERA = "rgb_camera"
    DEPTH_CAMERA = "depth_camera"
    VEHICLE_STATE = "vehicle_state"


class ActuatorKind(str, Enum):
    STEERING = "steering"
    DISPLAY = "display"


CAMERA_KINDS = {SensorKind.RGB_CAMERA, SensorKind.DEPTH_CAMERA}


@dataclass(frozen=True)
class Pose:
    """Mounting pose in the vehicle frame (x forward, y left, z up)."""

    position: tuple[float, float, float]
    orientation: tuple[float, float, float]  # yaw, pitch, roll in radians

    @classmethod
    def identity(cls) -> "Pose":
        return cls((0.0, 0.0, 0.0), (0.0, 0.0, 0.0))


@dataclass(frozen=True)
class ConnectionDetails:
    device_name: str
    manufacturer: str
    protocol: str
    address: str
    port: int


@dataclass(frozen=True)
class PhysicalParams:
    mass: float                # kg
    wheelbase: float           # m
    max_steering_angle: float  # rad
    tire_friction: float


@dataclass(frozen=True)
class CameraParams:
    width: int
    height: int
    fov_deg: float
    rate_hz: float

    @property
    def focal_px(self) -> float:
        return self.width / (2.0 * math.tan(math.radians(self.fov_deg) / 2.0))


@dataclass(frozen=True)
class SensorSpec:
    name: str
    kind: SensorKind
    pose: Pose
    params: dict[str, Any] = field(default_factory=dict)
    connection: ConnectionDetails = None  # type: ignore[assignment]

    def camera(self) -> CameraParams:
        if self.kind not in CAMERA_KINDS:
            raise ValueError(f"sensor {self.name!r} ({self.kind.value}) is not a camera")
        p = self.params
        return CameraParams(int(p["width"]), int(p["height"]),
                            float(p["fov_deg"]), float(p["rate_hz"]))

    @property
    def rate_hz(self) -> float:
        return float(self.params.get("rate_hz", 0.0))


@dataclass(frozen=True)
class ActuatorSpec:
    name: str
    kind: ActuatorKind
    limits: dict[str, float] = field(default_factory=dict)
    connection: ConnectionDetails = None  # type: ignore[assignment]


@dataclass(frozen=True)
class VehicleConfig:
    model_name: str
    physical: PhysicalParams
    sensors: tuple[SensorSpec, ...]
    actuators: tuple[ActuatorSpec, ...]

    def sensor(self, name: str) -> SensorSpec:
        for s in self.sensors:
            if s.name == name:
                return s
        raise KeyError(f"no sensor named {name!r}")

    def actuator(self, name: str) -> ActuatorSpec:
        for a in self.actuators:
            if a.name == name:
                return a
        raise KeyError(f"no actuator named {name!r}")

    def sensors_of(self, kind: SensorKind) -> list[SensorSpec]:
        return [s for s in self.sensors if s.kind == kind]


SUPPORTED_PROTOCOLS = {"tcp"}


def _require(obj: dict, key: str, path: str) -> Any:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", path)
    if key not in obj:
        raise ConfigError("missing required field", f"{path}.{key}" if path else key)
    return obj[key]


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", path)
    return float(value)


def _parse_pose(obj: Any, path: str) -> Pose:
    pos = _require(obj, "position", path)
    rot = _require(obj, "orientation", path)
    for name, val in (("position", pos), ("orientation", rot)):
        if not isinstance(val, list) or len(val) != 3:
            raise ConfigError("expected a 3-element array", f"{path}.{name}")
    return Pose(tuple(_number(v, f"{path}.position[{i}]") for i, v in enumerate(pos)),
                tuple(_number(v, f"{path}.orientation[{i}]") for i, v in enumerate(rot)))


def _parse_connection(obj: Any, path: str) -> ConnectionDetails:
    device = _require(obj, "device_name", path)
    manufacturer = _require(obj, "manufacturer", path)
    protocol = _require(obj, "protocol", path)
    address = _require(obj, "address", path)
    port = _require(obj, "port", path)
    if protocol not in SUPPORTED_PROTOCOLS:
        raise ConfigError(f"unsupported protocol {protocol!r}", f"{path}.protocol",
                          rule="protocol")
    if not isinstance(port, int) or isinstance(port, bool):
        raise ConfigError("expected an integer", f"{path}.port")
    return ConnectionDetails(str(device), str(manufacturer), str(protocol),
                             str(address), port)


def _parse_sensor(obj: Any, path: str) -> SensorSpec:
    name = _require(obj, "name", path)
    kind_raw = _require(obj, "kind", path)
    try:
        kind = SensorKind(kind_raw)
    except ValueError:
        raise ConfigError(f"unknown sensor kind {kind_raw!r}", f"{path}.kind") from None
    pose = _parse_pose(_require(obj, "pose", path), f"{path}.pose")
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("expected an object", f"{path}.params")
    if kind in CAMERA_KINDS:
        for key in ("width", "height", "fov_deg", "rate_hz"):
            _require(params, key, f"{path}.params")
    connection = _parse_connection(_require(obj, "connection", path), f"{path}.connection")
    return SensorSpec(str(name), kind, pose, dict(params), connection)


def _parse_actuator(obj: Any, path: str) -> ActuatorSpec:
    name = _require(obj, "name", path)
    kind_raw = _require(obj, "kind", path)
    try:
        kind = ActuatorKind(kind_raw)
    except ValueError:
        raise ConfigError(f"unknown actuator kind {kind_raw!r}", f"{path}.kind") from None
    limits = obj.get("limits", {})
    if not isinstance(limits, dict):
        raise ConfigError("expected an object", f"{path}.limits")
    if kind is ActuatorKind.STEERING:
        _require(limits, "max_angle", f"{path}.limits")
    connection = _parse_connection(_require(obj, "connection", path), f"{path}.connection")
    return ActuatorSpec(str(name), kind,
                        {k: _number(v, f"{path}.limits.{k}") for k, v in limits.items()},
                        connection)


def parse_vehicle_config(document: str) -> VehicleConfig:
    """Parse and validate a configuration document.

    Rejects everything ``validate_config`` would flag, so a successful parse
    implies a fully valid configuration.
    """
    cfg = parse_config_structure(document)
    violations = validate_config(cfg)
    if violations:
        v = violations[0]
        raise ConfigError(v.message, v.path, rule=v.rule)
    return cfg


def parse_config_structure(document: str) -> VehicleConfig:
    """Structural parse only (syntax, fields, kinds); invariant checking is
    left to ``validate_config`` so callers can report every violation."""
    try:
        root = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"syntax error: {exc}") from exc
    if not isinstance(root, dict):
        raise ConfigError("top level must be an object")

    model = _require(root, "model", "")
    phys_obj = _require(root, "physical", "")
    physical = PhysicalParams(
        mass=_number(_require(phys_obj, "mass", "physical"), "physical.mass"),
        wheelbase=_number(_require(phys_obj, "wheelbase", "physical"), "physical.wheelbase"),
        max_steering_angle=_number(_require(phys_obj, "max_steering_angle", "physical"),
                                   "physical.max_steering_angle"),
        tire_friction=_number(_require(phys_obj, "tire_friction", "physical"),
                              "physical.tire_friction"),
    )

    sensors_obj = _require(root, "sensors", "")
    actuators_obj = _require(root, "actuators", "")
    if not isinstance(sensors_obj, list):
        raise ConfigError("expected an array", "sensors")
    if not isinstance(actuators_obj, list):
        raise ConfigError("expected an array", "actuators")

    sensors = tuple(_parse_sensor(s, f"sensors[{i}]") for i, s in enumerate(sensors_obj))
    actuators = tuple(_parse_actuator(a, f"actuators[{i}]") for i, a in enumerate(actuators_obj))
    return VehicleConfig(str(model), physical, sensors, actuators)


def validate_config(cfg: VehicleConfig) -> list[Violation]:
    """Check every configuration invariant; violations are data, not errors."""
    out: list[Violation] = []

    for pname in ("mass", "wheelbase", "max_steering_angle", "tire_friction"):
        value = getattr(cfg.physical, pname)
        if not (math.isfinite(value) and value > 0):
            out.append(Violation(f"physical.{pname}", "positive-param",
                                 f"{pname} must be strictly positive, got {value}"))
    if cfg.physical.max_steering_angle >= math.pi / 2:
        out.append(Violation("physical.max_steering_angle", "steer-range",
                             "max_steering_angle must be below pi/2"))

    seen: dict[str, str] = {}
    for i, s in enumerate(cfg.sensors):
        path = f"sensors[{i}]"
        if s.name in seen:
            out.append(Violation(f"{path}.name", "unique-names",
                                 f"name {s.name!r} already used by {seen[s.name]}"))
        else:
            seen[s.name] = path
        out.extend(_check_pose(s.pose, f"{path}.pose"))
        out.extend(_check_connection(s.connection, f"{path}.connection"))
        if s.kind in CAMERA_KINDS:
            w, h = s.params.get("width"), s.params.get("height")
            if not isinstance(w, int) or not isinstance(h, int) or w < 1 or h < 1:
                out.append(Violation(f"{path}.params", "camera-dims",
                                     "camera width and height must be integers >= 1"))
            fov = s.params.get("fov_deg", 0.0)
            if not (isinstance(fov, (int, float)) and 0.0 < float(fov) < 180.0):
                out.append(Violation(f"{path}.params.fov_deg", "fov-range",
                                     f"fov_deg must be in (0, 180), got {fov}"))
        rate = s.params.get("rate_hz")
        if rate is not None and not (isinstance(rate, (int, float)) and float(rate) > 0):
            out.append(Violation(f"{path}.params.rate_hz", "rate-positive",
                                 f"rate_hz must be positive, got {rate}"))

    for i, a in enumerate(cfg.actuators):
        path = f"actuators[{i}]"
        if a.name in seen:
            out.append(Violation(f"{path}.name", "unique-names",
                                 f"name {a.name!r} already used by {seen[a.name]}"))
        else:
            seen[a.name] = path
        out.extend(_check_connection(a.connection, f"{path}.connection"))
        if a.kind is ActuatorKind.STEERING:
            max_angle = a.limits.get("max_angle")
            if max_angle is None or not math.isfinite(max_angle) or max_angle <= 0:
                out.append(Violation(f"{path}.limits.max_angle", "positive-param",
                                     "steering max_angle must be strictly positive"))
            elif max_angle > cfg.physical.max_steering_angle:
                out.append(Violation(
                    f"{path}.limits.max_angle", "steering-limit",
                    f"max_angle {max_angle} exceeds physical.max_steering_angle "
                    f"{cfg.physical.max_steering_angle}"))
    return out


def _check_pose(pose: Pose, path: str) -> list[Violation]:
    out = []
    for i, ang in enumerate(pose.orientation):
        if not (math.isfinite(ang) and -math.pi < ang <= math.pi):
            out.append(Violation(f"{path}.orientation[{i}]", "angle-range",
                                 f"angle must lie in (-pi, pi], got {ang}"))
    for i, coord in enumerate(pose.position):
        if not math.isfinite(coord):
            out.append(Violation(f"{path}.position[{i}]", "finite", "coordinate must be finite"))
    return out


def _check_connection(conn: Optional[ConnectionDetails], path: str) -> list[Violation]:
    if conn is None:
        return [Violation(path, "connection-required", "connection details are required")]
    out = []
    if conn.protocol not in SUPPORTED_PROTOCOLS:
        out.append(Violation(f"{path}.protocol", "protocol",
                             f"unsupported protocol {conn.protocol!r}"))
    if not 1 <= conn.port <= 65535:
        out.append(Violation(f"{path}.port", "port-range",
                             f"port must be in 1..65535, got {conn.port}"))
    return out


def serialize_vehicle_config(cfg: VehicleConfig) -> str:
    """Render a configuration back to its canonical JSON document."""
    doc = {
        "model": cfg.model_name,
        "physical": {
            "mass": cfg.physical.mass,
            "wheelbase": cfg.physical.wheelbase,
            "max_steering_angle": cfg.physical.max_steering_angle,
            "tire_friction": cfg.physical.tire_friction,
        },
        "sensors": [
            {
                "name": s.name,
                "kind": s.kind.value,
                "pose": {"position": list(s.pose.position),
                         "orientation": list(s.pose.orientation)},
                "params": s.params,
                "connection": _conn_doc(s.connection),
            }
            for s in cfg.sensors
        ],
        "actuators": [
            {
                "name": a.name,
                "kind": a.kind.value,
                "limits": a.limits,
                "connection": _conn_doc(a.connection),
            }
            for a in cfg.actuators
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def _conn_doc(conn: ConnectionDetails) -> dict:
    return {
        "device_name": conn.device_name,
        "manufacturer": conn.manufacturer,
        "protocol": conn.protocol,
        "address": conn.address,
        "port": conn.port,
    }


def fixture_config(host: str = "127.0.0.1", device_port_base: int = 46000) -> VehicleConfig:
    """The desk-scale demo vehicle: two front cameras, a state sensor,
    steering and a display, all served by the bundled simulator."""
    cam_pose = Pose((1.5, 0.0, 1.4), (0.0, 0.0, 0.0))
    cam_params = {"width": 320, "height": 240, "fov_deg": 90.0, "rate_hz": 20.0}

    def conn(device: str, offset: int) -> ConnectionDetails:
        return ConnectionDetails(device, "SimWorks", "tcp", host, device_port_base + offset)

    return VehicleConfig(
        model_name="C-Class Coupé",
        physical=PhysicalParams(mass=1600.0, wheelbase=2.84,
                                max_steering_angle=0.61, tire_friction=0.9),
        sensors=(
            SensorSpec("rgb", SensorKind.RGB_CAMERA, cam_pose, dict(cam_params),
                       conn("front-rgb-cam", 0)),
            SensorSpec("depth", SensorKind.DEPTH_CAMERA, cam_pose, dict(cam_params),
                       conn("front-depth-cam", 1)),
            SensorSpec("state", SensorKind.VEHICLE_STATE, Pose.identity(),
                       {"rate_hz": 20.0}, conn("state-unit", 2)),
        ),
        actuators=(
            ActuatorSpec("steer", ActuatorKind.STEERING, {"max_angle": 0.61},
                         conn("steering-rack", 3)),
            ActuatorSpec("display", ActuatorKind.DISPLAY, {},
                         conn("cabin-display", 4)),
        ),
    )


def fixture_document(host: str = "127.0.0.1", device_port_base: int = 46000) -> str:
    return serialize_vehicle_config(fixture_config(host, device_port_base))
