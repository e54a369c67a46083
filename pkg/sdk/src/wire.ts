/**
 * Binary wire protocol, bit-exact with the framework's codec.
 *
 * Frame layout (little-endian): magic "AFRM", version u8 (=1), msg_type u8,
 * stream_id u16, timestamp u64, payload length u32, payload bytes.
 *
 * Capture payloads are typed by the stream's topic (no tag on the wire);
 * command payloads carry a one-byte kind tag. Codec functions are
 * structural only; semantic checks live in validatePayload and are applied
 * by the module frame's input/output checks.
 */

export const MAGIC = Buffer.from("AFRM", "ascii");
export const VERSION = 1;
export const HEADER_SIZE = 20;
export const MAX_PAYLOAD = 64 * 1024 * 1024;

export enum MsgType {
  Capture = 0,
  Command = 1,
  Heartbeat = 2,
  ConfigPush = 3,
}

export enum PixelFormat {
  RGB8 = 0,
  DepthF32 = 1,
}

export const BYTES_PER_PIXEL: Record<PixelFormat, number> = {
  [PixelFormat.RGB8]: 3,
  [PixelFormat.DepthF32]: 4,
};

export const CHANNELS: Record<PixelFormat, number> = {
  [PixelFormat.RGB8]: 3,
  [PixelFormat.DepthF32]: 1,
};

const CMD_STEERING = 0;
const CMD_DISPLAY_FRAME = 1;

export type TopicType =
  | "image_rgb"
  | "image_depth"
  | "vehicle_state"
  | "lane_centers"
  | "waypoints"
  | "steering_cmd"
  | "display_frame";

export class CorruptStreamError extends Error {}

export class ProtocolError extends Error {
  consumed: number;
  constructor(message: string, consumed = 0) {
    super(message);
    this.consumed = consumed;
  }
}

export interface ImageCapture {
  kind: "image";
  width: number;
  height: number;
  channels: number;
  pixelFormat: PixelFormat;
  pixels: Buffer;
}

export interface StateCapture {
  kind: "state";
  speed: number;
  yaw: number;
  yawRate: number;
}

export interface WaypointSet {
  kind: "waypoints";
  points: Array<[number, number, number]>;
}

export interface LaneCenterSet {
  kind: "lane_centers";
  points: Array<[number, number]>;
}

export interface RawCapture {
  kind: "raw";
  data: Buffer;
}

export interface SteeringCommand {
  kind: "steering";
  angle: number;
}

export interface DisplayFrame {
  kind: "display";
  image: ImageCapture;
}

export interface Heartbeat {
  kind: "heartbeat";
}

export interface ConfigPush {
  kind: "config_push";
  data: Buffer;
}

export type Payload =
  | ImageCapture
  | StateCapture
  | WaypointSet
  | LaneCenterSet
  | RawCapture
  | SteeringCommand
  | DisplayFrame
  | Heartbeat
  | ConfigPush;

export interface Message {
  msgType: MsgType;
  streamId: number;
  timestampUs: bigint;
  payload: Payload;
}

export function msgTypeOf(payload: Payload): MsgType {
  switch (payload.kind) {
    case "image":
    case "state":
    case "waypoints":
    case "lane_centers":
    case "raw":
      return MsgType.Capture;
    case "steering":
    case "display":
      return MsgType.Command;
    case "heartbeat":
      return MsgType.Heartbeat;
    case "config_push":
      return MsgType.ConfigPush;
  }
}

export function message(payload: Payload, streamId = 0, timestampUs: bigint = 0n): Message {
  return { msgType: msgTypeOf(payload), streamId, timestampUs, payload };
}

function encodeImageBody(img: ImageCapture): Buffer {
  const head = Buffer.alloc(10);
  head.writeUInt32LE(img.width, 0);
  head.writeUInt32LE(img.height, 4);
  head.writeUInt8(img.channels, 8);
  head.writeUInt8(img.pixelFormat, 9);
  return Buffer.concat([head, img.pixels]);
}

function decodeImageBody(raw: Buffer): ImageCapture {
  if (raw.length < 10) throw new ProtocolError("image payload shorter than its header");
  const width = raw.readUInt32LE(0);
  const height = raw.readUInt32LE(4);
  const channels = raw.readUInt8(8);
  const fmt = raw.readUInt8(9);
  if (fmt !== PixelFormat.RGB8 && fmt !== PixelFormat.DepthF32) {
    throw new ProtocolError(`unknown pixel format ${fmt}`);
  }
  const pixels = raw.subarray(10);
  const expect = width * height * BYTES_PER_PIXEL[fmt as PixelFormat];
  if (pixels.length !== expect) {
    throw new ProtocolError(
      `pixel buffer is ${pixels.length} bytes, expected ${expect}`);
  }
  return { kind: "image", width, height, channels,
           pixelFormat: fmt as PixelFormat, pixels: Buffer.from(pixels) };
}

export function encodePayload(payload: Payload): Buffer {
  switch (payload.kind) {
    case "image":
      return encodeImageBody(payload);
    case "state": {
      const buf = Buffer.alloc(24);
      buf.writeDoubleLE(payload.speed, 0);
      buf.writeDoubleLE(payload.yaw, 8);
      buf.writeDoubleLE(payload.yawRate, 16);
      return buf;
    }
    case "waypoints": {
      const buf = Buffer.alloc(4 + 24 * payload.points.length);
      buf.writeUInt32LE(payload.points.length, 0);
      payload.points.forEach(([x, y, z], i) => {
        buf.writeDoubleLE(x, 4 + 24 * i);
        buf.writeDoubleLE(y, 12 + 24 * i);
        buf.writeDoubleLE(z, 20 + 24 * i);
      });
      return buf;
    }
    case "lane_centers": {
      const buf = Buffer.alloc(4 + 8 * payload.points.length);
      buf.writeUInt32LE(payload.points.length, 0);
      payload.points.forEach(([u, v], i) => {
        buf.writeFloatLE(u, 4 + 8 * i);
        buf.writeFloatLE(v, 8 + 8 * i);
      });
      return buf;
    }
    case "raw":
      return payload.data;
    case "steering": {
      const buf = Buffer.alloc(9);
      buf.writeUInt8(CMD_STEERING, 0);
      buf.writeDoubleLE(payload.angle, 1);
      return buf;
    }
    case "display":
      return Buffer.concat([Buffer.from([CMD_DISPLAY_FRAME]),
                            encodeImageBody(payload.image)]);
    case "heartbeat":
      return Buffer.alloc(0);
    case "config_push":
      return payload.data;
  }
}

export function decodeCapture(raw: Buffer, topic: TopicType): Payload {
  switch (topic) {
    case "image_rgb":
    case "image_depth":
      return decodeImageBody(raw);
    case "vehicle_state": {
      if (raw.length !== 24) {
        throw new ProtocolError(`state payload is ${raw.length} bytes, expected 24`);
      }
      return { kind: "state", speed: raw.readDoubleLE(0), yaw: raw.readDoubleLE(8),
               yawRate: raw.readDoubleLE(16) };
    }
    case "waypoints": {
      if (raw.length < 4) throw new ProtocolError("waypoint payload too short");
      const count = raw.readUInt32LE(0);
      if (raw.length !== 4 + 24 * count) {
        throw new ProtocolError(
          `waypoint payload is ${raw.length} bytes, expected ${4 + 24 * count}`);
      }
      const points: Array<[number, number, number]> = [];
      for (let i = 0; i < count; i++) {
        points.push([raw.readDoubleLE(4 + 24 * i), raw.readDoubleLE(12 + 24 * i),
                     raw.readDoubleLE(20 + 24 * i)]);
      }
      return { kind: "waypoints", points };
    }
    case "lane_centers": {
      if (raw.length < 4) throw new ProtocolError("lane-center payload too short");
      const count = raw.readUInt32LE(0);
      if (raw.length !== 4 + 8 * count) {
        throw new ProtocolError(
          `lane-center payload is ${raw.length} bytes, expected ${4 + 8 * count}`);
      }
      const points: Array<[number, number]> = [];
      for (let i = 0; i < count; i++) {
        points.push([raw.readFloatLE(4 + 8 * i), raw.readFloatLE(8 + 8 * i)]);
      }
      return { kind: "lane_centers", points };
    }
    default:
      throw new ProtocolError(`topic ${topic} does not carry captures`);
  }
}

function decodeCommand(raw: Buffer): Payload {
  if (raw.length < 1) throw new ProtocolError("command payload missing its kind byte");
  const kind = raw.readUInt8(0);
  if (kind === CMD_STEERING) {
    if (raw.length !== 9) {
      throw new ProtocolError(`steering command is ${raw.length} bytes, expected 9`);
    }
    return { kind: "steering", angle: raw.readDoubleLE(1) };
  }
  if (kind === CMD_DISPLAY_FRAME) {
    return { kind: "display", image: decodeImageBody(raw.subarray(1)) };
  }
  throw new ProtocolError(`unknown command kind ${kind}`);
}

export function encodeMessage(msg: Message): Buffer {
  const body = encodePayload(msg.payload);
  if (body.length > MAX_PAYLOAD) {
    throw new ProtocolError(`payload of ${body.length} bytes exceeds the cap`);
  }
  const head = Buffer.alloc(HEADER_SIZE);
  MAGIC.copy(head, 0);
  head.writeUInt8(VERSION, 4);
  head.writeUInt8(msg.msgType, 5);
  head.writeUInt16LE(msg.streamId, 6);
  head.writeBigUInt64LE(msg.timestampUs, 8);
  head.writeUInt32LE(body.length, 16);
  return Buffer.concat([head, body]);
}

export function decodeMessage(
  buf: Buffer, captureTopic?: TopicType,
): { msg: Message; consumed: number } | null {
  const probe = Math.min(buf.length, MAGIC.length);
  if (!buf.subarray(0, probe).equals(MAGIC.subarray(0, probe))) {
    throw new CorruptStreamError("bad magic; stream is corrupt");
  }
  if (buf.length < HEADER_SIZE) return null;
  const version = buf.readUInt8(4);
  if (version !== VERSION) {
    throw new CorruptStreamError(`unsupported protocol version ${version}`);
  }
  const rawType = buf.readUInt8(5);
  if (rawType > MsgType.ConfigPush) {
    throw new CorruptStreamError(`unknown message type ${rawType}`);
  }
  const streamId = buf.readUInt16LE(6);
  const timestampUs = buf.readBigUInt64LE(8);
  const length = buf.readUInt32LE(16);
  if (length > MAX_PAYLOAD) {
    throw new CorruptStreamError(`declared payload of ${length} bytes exceeds the cap`);
  }
  const total = HEADER_SIZE + length;
  if (buf.length < total) return null;
  const raw = Buffer.from(buf.subarray(HEADER_SIZE, total));

  let payload: Payload;
  try {
    switch (rawType as MsgType) {
      case MsgType.Capture:
        payload = captureTopic ? decodeCapture(raw, captureTopic)
                               : { kind: "raw", data: raw };
        break;
      case MsgType.Command:
        payload = decodeCommand(raw);
        break;
      case MsgType.Heartbeat:
        if (length !== 0) {
          throw new ProtocolError(`heartbeat carries ${length} payload bytes`);
        }
        payload = { kind: "heartbeat" };
        break;
      default:
        payload = { kind: "config_push", data: raw };
    }
  } catch (err) {
    if (err instanceof ProtocolError) err.consumed = total;
    throw err;
  }
  return { msg: { msgType: rawType as MsgType, streamId, timestampUs, payload },
           consumed: total };
}

/** Incremental per-connection decoder; skips frames whose payload fails the
 * schema and refuses further input after header-level corruption. */
export class StreamDecoder {
  dropped = 0;
  private buf: Buffer = Buffer.alloc(0);
  private dead = false;

  constructor(private captureTopic?: TopicType) {}

  feed(data: Buffer): Message[] {
    if (this.dead) throw new CorruptStreamError("stream already declared corrupt");
    this.buf = this.buf.length ? Buffer.concat([this.buf, data]) : Buffer.from(data);
    const out: Message[] = [];
    for (;;) {
      if (this.buf.length === 0) break;
      let result;
      try {
        result = decodeMessage(this.buf, this.captureTopic);
      } catch (err) {
        if (err instanceof ProtocolError) {
          this.dropped += 1;
          this.buf = this.buf.subarray(err.consumed);
          continue;
        }
        this.dead = true;
        throw err;
      }
      if (result === null) break;
      out.push(result.msg);
      this.buf = this.buf.subarray(result.consumed);
    }
    return out;
  }
}

/** Reasons a payload is not a valid message on the topic (empty = valid). */
export function validatePayload(payload: Payload, topic: TopicType): string[] {
  const problems: string[] = [];
  const expectKind: Record<TopicType, Payload["kind"]> = {
    image_rgb: "image",
    image_depth: "image",
    vehicle_state: "state",
    lane_centers: "lane_centers",
    waypoints: "waypoints",
    steering_cmd: "steering",
    display_frame: "display",
  };
  if (payload.kind !== expectKind[topic]) {
    return [`payload ${payload.kind} does not match topic ${topic}`];
  }
  switch (payload.kind) {
    case "image": {
      if (payload.width < 1 || payload.height < 1) problems.push("bad dimensions");
      const expect = payload.width * payload.height * BYTES_PER_PIXEL[payload.pixelFormat];
      if (payload.pixels.length !== expect) problems.push("pixel size mismatch");
      if (topic === "image_rgb" && payload.pixelFormat !== PixelFormat.RGB8) {
        problems.push("pixel format does not match topic");
      }
      if (topic === "image_depth" && payload.pixelFormat !== PixelFormat.DepthF32) {
        problems.push("pixel format does not match topic");
      }
      break;
    }
    case "state":
      for (const v of [payload.speed, payload.yaw, payload.yawRate]) {
        if (!Number.isFinite(v)) problems.push("non-finite state value");
      }
      break;
    case "waypoints":
      for (const [x, y, z] of payload.points) {
        if (![x, y, z].every(Number.isFinite)) problems.push("non-finite waypoint");
        else if (x <= 0) problems.push("waypoint not ahead of the vehicle");
      }
      break;
    case "lane_centers":
      for (const [u, v] of payload.points) {
        if (!Number.isFinite(u) || !Number.isFinite(v)) problems.push("non-finite center");
      }
      break;
    case "steering":
      if (!Number.isFinite(payload.angle)) problems.push("steering angle not finite");
      break;
    case "display": {
      const img = payload.image;
      const expect = img.width * img.height * BYTES_PER_PIXEL[img.pixelFormat];
      if (img.pixels.length !== expect) problems.push("pixel size mismatch");
      break;
    }
  }
  return problems;
}

export function isCommandTopic(topic: TopicType): boolean {
  return topic === "steering_cmd" || topic === "display_frame";
}
