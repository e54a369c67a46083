"""Unified message model and the binary wire protocol spoken by every module.

Frame layout (all integers little-endian):

    magic     4 bytes  b"AFRM"
    version   u8       currently 1
    msg_type  u8       Capture=0, Command=1, Heartbeat=2, ConfigPush=3
    stream_id u16      assigned per edge at deployment time
    timestamp u64      microseconds of simulation time
    length    u32      payload byte count
    payload   <length> bytes

Capture payloads are not self-describing: the schema of a capture stream is
fixed by the topic the edge carries, so the consumer supplies the expected
payload class when decoding.  Command payloads carry a one-byte kind tag so
that actuator adapters can verify the command kind independently of the
connection it arrived on.

Codec functions are structural only: they guarantee the bytes match the
layout, not that the values are semantically valid.  Semantic checks
(finite angles, image dimension sanity) live in ``Payload.validate`` and are
applied by the module frame's input/output checks.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import ClassVar, Optional, Union

MAGIC = b"AFRM"
VERSION = 1
HEADER = struct.Struct("<4sBBHQI")
HEADER_SIZE = HEADER.size  # 20
MAX_PAYLOAD = 64 * 1024 * 1024

_U16_MAX = 0xFFFF
_U64_MAX = 0xFFFFFFFFFFFFFFFF


class WireError(Exception):
    """Base class for wire protocol failures."""


class CorruptStream(WireError):
    """Unrecoverable framing error; the connection must be dropped.

    Resynchronization is never attempted: once the header is bad there is
    no trustworthy way to find the next frame boundary.
    """


class ProtocolError(WireError):
    """A single frame's payload does not match its declared schema.

    The frame boundary itself is intact, so callers may skip the frame and
    keep reading.  ``consumed`` is the full frame length to skip.
    """

    def __init__(self, message: str, consumed: int = 0):
        super().__init__(message)
        self.consumed = consumed


class MsgType(IntEnum):
    CAPTURE = 0
    COMMAND = 1
    HEARTBEAT = 2
    CONFIG_PUSH = 3


class PixelFormat(IntEnum):
    RGB8 = 0
    DEPTH_F32 = 1


BYTES_PER_PIXEL = {PixelFormat.RGB8: 3, PixelFormat.DEPTH_F32: 4}
CHANNELS = {PixelFormat.RGB8: 3, PixelFormat.DEPTH_F32: 1}

# Command payload kind tags on the wire.
CMD_STEERING = 0
CMD_DISPLAY_FRAME = 1


class TopicType(str, Enum):
    """Registered topic set; a topic fixes the payload schema of an edge."""

    IMAGE_RGB = "image_rgb"
    IMAGE_DEPTH = "image_depth"
    VEHICLE_STATE = "vehicle_state"
    LANE_CENTERS = "lane_centers"
    WAYPOINTS = "waypoints"
    STEERING_CMD = "steering_cmd"
    DISPLAY_FRAME = "display_frame"


@dataclass(frozen=True)
class ImageCapture:
    """Row-major image; pixels are raw bytes in the given format."""

    width: int
    height: int
    channels: int
    pixel_format: PixelFormat
    pixels: bytes

    MSG_TYPE: ClassVar[MsgType] = MsgType.CAPTURE
    _HEAD: ClassVar[struct.Struct] = struct.Struct("<IIBB")

    @classmethod
    def rgb8(cls, width: int, height: int, pixels: bytes) -> "ImageCapture":
        return cls(width, height, 3, PixelFormat.RGB8, pixels)

    @classmethod
    def depth_f32(cls, width: int, height: int, pixels: bytes) -> "ImageCapture":
        return cls(width, height, 1, PixelFormat.DEPTH_F32, pixels)

    def to_bytes(self) -> bytes:
        return self._HEAD.pack(self.width, self.height, self.channels,
                               int(self.pixel_format)) + self.pixels

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ImageCapture":
        if len(raw) < cls._HEAD.size:
            raise ProtocolError("image payload shorter than its fixed header")
        w, h, channels, fmt = cls._HEAD.unpack_from(raw)
        try:
            pixel_format = PixelFormat(fmt)
        except ValueError:
            raise ProtocolError(f"unknown pixel format {fmt}") from None
        pixels = bytes(raw[cls._HEAD.size:])
        expect = w * h * BYTES_PER_PIXEL[pixel_format]
        if len(pixels) != expect:
            raise ProtocolError(
                f"pixel buffer is {len(pixels)} bytes, expected {expect} "
                f"for {w}x{h} {pixel_format.name}")
        return cls(w, h, channels, pixel_format, pixels)

    def validate(self) -> list[str]:
        problems = []
        if self.width < 1 or self.height < 1:
            problems.append("image dimensions must be >= 1")
        if self.channels != CHANNELS[self.pixel_format]:
            problems.append(
                f"channels={self.channels} inconsistent with {self.pixel_format.name}")
        expect = self.width * self.height * BYTES_PER_PIXEL[self.pixel_format]
        if len(self.pixels) != expect:
            problems.append(f"pixel buffer is {len(self.pixels)} bytes, expected {expect}")
        return problems


@dataclass(frozen=True)
class StateCapture:
    """Vehicle motion state as reported by the state sensor."""

    speed: float
    yaw: float
    yaw_rate: float

    MSG_TYPE: ClassVar[MsgType] = MsgType.CAPTURE
    _FMT: ClassVar[struct.Struct] = struct.Struct("<ddd")

    def to_bytes(self) -> bytes:
        return self._FMT.pack(self.speed, self.yaw, self.yaw_rate)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "StateCapture":
        if len(raw) != cls._FMT.size:
            raise ProtocolError(f"state payload is {len(raw)} bytes, expected {cls._FMT.size}")
        return cls(*cls._FMT.unpack(raw))

    def validate(self) -> list[str]:
        import math
        bad = [n for n, v in (("speed", self.speed), ("yaw", self.yaw),
                              ("yaw_rate", self.yaw_rate)) if not math.isfinite(v)]
        return [f"non-finite {n}" for n in bad]


@dataclass(frozen=True)
class WaypointSet:
    """Planned path points (x, y, z) in meters, vehicle frame, near to far."""

    points: tuple[tuple[float, float, float], ...]

    MSG_TYPE: ClassVar[MsgType] = MsgType.CAPTURE

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack("<I", len(self.points)))
        for p in self.points:
            out += struct.pack("<ddd", *p)
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "WaypointSet":
        if len(raw) < 4:
            raise ProtocolError("waypoint payload shorter than its count field")
        (count,) = struct.unpack_from("<I", raw)
        if len(raw) != 4 + 24 * count:
            raise ProtocolError(
                f"waypoint payload is {len(raw)} bytes, expected {4 + 24 * count} for count={count}")
        points = tuple(struct.unpack_from("<ddd", raw, 4 + 24 * i) for i in range(count))
        return cls(points)

    def validate(self) -> list[str]:
        import math
        problems = []
        for i, (x, y, z) in enumerate(self.points):
            if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(z)):
                problems.append(f"points[{i}] not finite")
            elif x <= 0:
                problems.append(f"points[{i}] not ahead of the vehicle (x={x})")
        return problems


@dataclass(frozen=True)
class LaneCenterSet:
    """Detected lane-center pixels (u, v), near scanlines first."""

    points: tuple[tuple[float, float], ...]

    MSG_TYPE: ClassVar[MsgType] = MsgType.CAPTURE

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack("<I", len(self.points)))
        for p in self.points:
            out += struct.pack("<ff", *p)
        return bytes(out)

    @classmethod
    def from_bytes(cls, raw: bytes) -> "LaneCenterSet":
        if len(raw) < 4:
            raise ProtocolError("lane-center payload shorter than its count field")
        (count,) = struct.unpack_from("<I", raw)
        if len(raw) != 4 + 8 * count:
            raise ProtocolError(
                f"lane-center payload is {len(raw)} bytes, expected {4 + 8 * count} for count={count}")
        points = tuple(struct.unpack_from("<ff", raw, 4 + 8 * i) for i in range(count))
        return cls(points)

    def validate(self) -> list[str]:
        import math
        return [f"points[{i}] not finite" for i, (u, v) in enumerate(self.points)
                if not (math.isfinite(u) and math.isfinite(v))]


@dataclass(frozen=True)
class RawCapture:
    """Capture payload kept as opaque bytes when no schema context is given."""

    data: bytes

    MSG_TYPE: ClassVar[MsgType] = MsgType.CAPTURE

    def to_bytes(self) -> bytes:
        return self.data

    def validate(self) -> list[str]:
        return []


@dataclass(frozen=True)
class SteeringCommand:
    """Steering angle in radians, positive left."""

    angle: float

    MSG_TYPE: ClassVar[MsgType] = MsgType.COMMAND

    def to_bytes(self) -> bytes:
        return struct.pack("<Bd", CMD_STEERING, self.angle)

    def validate(self) -> list[str]:
        import math
        return [] if math.isfinite(self.angle) else ["steering angle not finite"]


@dataclass(frozen=True)
class DisplayFrame:
    """An image destined for a display actuator."""

    image: ImageCapture

    MSG_TYPE: ClassVar[MsgType] = MsgType.COMMAND

    def to_bytes(self) -> bytes:
        return bytes([CMD_DISPLAY_FRAME]) + self.image.to_bytes()

    def validate(self) -> list[str]:
        return self.image.validate()


@dataclass(frozen=True)
class Heartbeat:
    """Liveness beacon; carries no payload."""

    MSG_TYPE: ClassVar[MsgType] = MsgType.HEARTBEAT

    def to_bytes(self) -> bytes:
        return b""

    def validate(self) -> list[str]:
        return []


@dataclass(frozen=True)
class ConfigPush:
    """A full vehicle-configuration document pushed by the debug server.

    The document bytes are carried verbatim; parsing happens at the receiver.
    """

    data: bytes

    MSG_TYPE: ClassVar[MsgType] = MsgType.CONFIG_PUSH

    @classmethod
    def from_document(cls, document: str) -> "ConfigPush":
        return cls(document.encode("utf-8"))

    def document(self) -> str:
        return self.data.decode("utf-8")

    def to_bytes(self) -> bytes:
        return self.data

    def validate(self) -> list[str]:
        try:
            self.data.decode("utf-8")
        except UnicodeDecodeError:
            return ["config document is not valid UTF-8"]
        return []


CapturePayload = Union[ImageCapture, StateCapture, WaypointSet, LaneCenterSet, RawCapture]
CommandPayload = Union[SteeringCommand, DisplayFrame]
Payload = Union[CapturePayload, CommandPayload, Heartbeat, ConfigPush]

CAPTURE_TYPES = (ImageCapture, StateCapture, WaypointSet, LaneCenterSet, RawCapture)

TOPIC_PAYLOADS: dict[TopicType, type] = {
    TopicType.IMAGE_RGB: ImageCapture,
    TopicType.IMAGE_DEPTH: ImageCapture,
    TopicType.VEHICLE_STATE: StateCapture,
    TopicType.LANE_CENTERS: LaneCenterSet,
    TopicType.WAYPOINTS: WaypointSet,
    TopicType.STEERING_CMD: SteeringCommand,
    TopicType.DISPLAY_FRAME: DisplayFrame,
}

COMMAND_TOPICS = {TopicType.STEERING_CMD, TopicType.DISPLAY_FRAME}

_TOPIC_PIXEL_FORMAT = {
    TopicType.IMAGE_RGB: PixelFormat.RGB8,
    TopicType.IMAGE_DEPTH: PixelFormat.DEPTH_F32,
}


def payload_matches_topic(payload: Payload, topic: TopicType) -> list[str]:
    """Return the reasons ``payload`` is not a valid message on ``topic``.

    Combines the kind check (schema fixed by the topic, including the pixel
    format of image topics) with the payload's own invariants.
    """
    expected = TOPIC_PAYLOADS[topic]
    if not isinstance(payload, expected):
        return [f"payload {type(payload).__name__} does not match topic {topic.value}"]
    problems = payload.validate()
    want_fmt = _TOPIC_PIXEL_FORMAT.get(topic)
    if want_fmt is not None and payload.pixel_format != want_fmt:
        problems.append(
            f"pixel format {payload.pixel_format.name} does not match topic {topic.value}")
    return problems


@dataclass(frozen=True)
class Message:
    msg_type: MsgType
    stream_id: int
    timestamp_us: int
    payload: Payload

    def __post_init__(self):
        if self.payload.MSG_TYPE != self.msg_type:
            raise ValueError(
                f"payload {type(self.payload).__name__} does not carry msg_type {self.msg_type!r}")
        if not 0 <= self.stream_id <= _U16_MAX:
            raise ValueError(f"stream_id {self.stream_id} outside u16 range")
        if not 0 <= self.timestamp_us <= _U64_MAX:
            raise ValueError(f"timestamp_us {self.timestamp_us} outside u64 range")

    @classmethod
    def of(cls, payload: Payload, stream_id: int = 0, timestamp_us: int = 0) -> "Message":
        """Build a message with the msg_type implied by the payload."""
        return cls(payload.MSG_TYPE, stream_id, timestamp_us, payload)


def encode_message(msg: Message) -> bytes:
    body = msg.payload.to_bytes()
    if len(body) > MAX_PAYLOAD:
        raise ProtocolError(f"payload of {len(body)} bytes exceeds the {MAX_PAYLOAD} byte cap")
    return HEADER.pack(MAGIC, VERSION, int(msg.msg_type), msg.stream_id,
                       msg.timestamp_us, len(body)) + body


def _parse_command(raw: bytes) -> CommandPayload:
    if len(raw) < 1:
        raise ProtocolError("command payload missing its kind byte")
    kind = raw[0]
    if kind == CMD_STEERING:
        if len(raw) != 9:
            raise ProtocolError(f"steering command is {len(raw)} bytes, expected 9")
        (angle,) = struct.unpack_from("<d", raw, 1)
        return SteeringCommand(angle)
    if kind == CMD_DISPLAY_FRAME:
        return DisplayFrame(ImageCapture.from_bytes(raw[1:]))
    raise ProtocolError(f"unknown command kind {kind}")


def decode_message(
    buf: Union[bytes, bytearray, memoryview],
    capture_type: Optional[type] = None,
) -> Optional[tuple[Message, int]]:
    """Decode one message from the front of ``buf``.

    Returns ``(message, bytes_consumed)``, or ``None`` if the buffer holds
    only a prefix of a frame (read more and retry; nothing was consumed).

    ``capture_type`` supplies the schema for capture payloads, normally
    derived from the stream's topic.  Without it captures come back as
    :class:`RawCapture`.

    Raises :class:`CorruptStream` for header-level corruption (bad magic,
    unknown version or message type, oversized payload) and
    :class:`ProtocolError` when the payload does not match its schema; the
    latter carries the frame length so callers may skip the frame.
    """
    view = memoryview(buf)
    try:
        probe = min(len(view), len(MAGIC))
        if bytes(view[:probe]) != MAGIC[:probe]:
            raise CorruptStream("bad magic; stream is corrupt")
        if len(view) < HEADER_SIZE:
            return None
        _, version, raw_type, stream_id, timestamp_us, length = HEADER.unpack_from(view)
        if version != VERSION:
            raise CorruptStream(f"unsupported protocol version {version}")
        try:
            msg_type = MsgType(raw_type)
        except ValueError:
            raise CorruptStream(f"unknown message type {raw_type}") from None
        if length > MAX_PAYLOAD:
            raise CorruptStream(f"declared payload of {length} bytes exceeds the cap")
        total = HEADER_SIZE + length
        if len(view) < total:
            return None
        raw = bytes(view[HEADER_SIZE:total])
    finally:
        # Release now so callers may resize the underlying buffer even when
        # the raised exception keeps this frame alive in a traceback.
        view.release()

    payload: Payload
    try:
        if msg_type is MsgType.CAPTURE:
            payload = capture_type.from_bytes(raw) if capture_type else RawCapture(raw)
        elif msg_type is MsgType.COMMAND:
            payload = _parse_command(raw)
        elif msg_type is MsgType.HEARTBEAT:
            if length != 0:
                raise ProtocolError(f"heartbeat carries {length} payload bytes, expected none")
            payload = Heartbeat()
        else:
            payload = ConfigPush(raw)
    except ProtocolError as exc:
        exc.consumed = total
        raise

    return Message(msg_type, stream_id, timestamp_us, payload), total


class StreamDecoder:
    """Incremental decoder for one connection.

    Feed arbitrary byte chunks; complete messages come out in order.  Frames
    whose payload fails the schema are skipped and counted in ``dropped``.
    A :class:`CorruptStream` error is permanent: the decoder refuses further
    input because the frame boundary is lost.
    """

    def __init__(self, capture_type: Optional[type] = None):
        self.capture_type = capture_type
        self.dropped = 0
        self._buf = bytearray()
        self._dead = False

    def feed(self, data: bytes) -> list[Message]:
        if self._dead:
            raise CorruptStream("stream already declared corrupt")
        self._buf += data
        out: list[Message] = []
        while self._buf:
            try:
                result = decode_message(self._buf, self.capture_type)
            except ProtocolError as exc:
                self.dropped += 1
                del self._buf[:exc.consumed]
                continue
            except CorruptStream:
                self._dead = True
                raise
            if result is None:
                break
            msg, consumed = result
            del self._buf[:consumed]
            out.append(msg)
        return out

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)
