"use strict";
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
Object.defineProperty(exports, "__esModule", { value: true });
exports.StreamDecoder = exports.ProtocolError = exports.CorruptStreamError = exports.CHANNELS = exports.BYTES_PER_PIXEL = exports.PixelFormat = exports.MsgType = exports.MAX_PAYLOAD = exports.HEADER_SIZE = exports.VERSION = exports.MAGIC = void 0;
exports.msgTypeOf = msgTypeOf;
exports.message = message;
exports.encodePayload = encodePayload;
exports.decodeCapture = decodeCapture;
exports.encodeMessage = encodeMessage;
exports.decodeMessage = decodeMessage;
exports.validatePayload = validatePayload;
exports.isCommandTopic = isCommandTopic;
exports.MAGIC = Buffer.from("AFRM", "ascii");
exports.VERSION = 1;
exports.HEADER_SIZE = 20;
exports.MAX_PAYLOAD = 64 * 1024 * 1024;
var MsgType;
(function (MsgType) {
    MsgType[MsgType["Capture"] = 0] = "Capture";
    MsgType[MsgType["Command"] = 1] = "Command";
    MsgType[MsgType["Heartbeat"] = 2] = "Heartbeat";
    MsgType[MsgType["ConfigPush"] = 3] = "ConfigPush";
})(MsgType || (exports.MsgType = MsgType = {}));
var PixelFormat;
(function (PixelFormat) {
    PixelFormat[PixelFormat["RGB8"] = 0] = "RGB8";
    PixelFormat[PixelFormat["DepthF32"] = 1] = "DepthF32";
})(PixelFormat || (exports.PixelFormat = PixelFormat = {}));
exports.BYTES_PER_PIXEL = {
    [PixelFormat.RGB8]: 3,
    [PixelFormat.DepthF32]: 4,
};
exports.CHANNELS = {
    [PixelFormat.RGB8]: 3,
    [PixelFormat.DepthF32]: 1,
};
const CMD_STEERING = 0;
const CMD_DISPLAY_FRAME = 1;
class CorruptStreamError extends Error {
}
exports.CorruptStreamError = CorruptStreamError;
class ProtocolError extends Error {
    consumed;
    constructor(message, consumed = 0) {
        super(message);
        this.consumed = consumed;
    }
}
exports.ProtocolError = ProtocolError;
function msgTypeOf(payload) {
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
function message(payload, streamId = 0, timestampUs = 0n) {
    return { msgType: msgTypeOf(payload), streamId, timestampUs, payload };
}
function encodeImageBody(img) {
    const head = Buffer.alloc(10);
    head.writeUInt32LE(img.width, 0);
    head.writeUInt32LE(img.height, 4);
    head.writeUInt8(img.channels, 8);
    head.writeUInt8(img.pixelFormat, 9);
    return Buffer.concat([head, img.pixels]);
}
function decodeImageBody(raw) {
    if (raw.length < 10)
        throw new ProtocolError("image payload shorter than its header");
    const width = raw.readUInt32LE(0);
    const height = raw.readUInt32LE(4);
    const channels = raw.readUInt8(8);
    const fmt = raw.readUInt8(9);
    if (fmt !== PixelFormat.RGB8 && fmt !== PixelFormat.DepthF32) {
        throw new ProtocolError(`unknown pixel format ${fmt}`);
    }
    const pixels = raw.subarray(10);
    const expect = width * height * exports.BYTES_PER_PIXEL[fmt];
    if (pixels.length !== expect) {
        throw new ProtocolError(`pixel buffer is ${pixels.length} bytes, expected ${expect}`);
    }
    return { kind: "image", width, height, channels,
        pixelFormat: fmt, pixels: Buffer.from(pixels) };
}
function encodePayload(payload) {
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
function decodeCapture(raw, topic) {
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
            if (raw.length < 4)
                throw new ProtocolError("waypoint payload too short");
            const count = raw.readUInt32LE(0);
            if (raw.length !== 4 + 24 * count) {
                throw new ProtocolError(`waypoint payload is ${raw.length} bytes, expected ${4 + 24 * count}`);
            }
            const points = [];
            for (let i = 0; i < count; i++) {
                points.push([raw.readDoubleLE(4 + 24 * i), raw.readDoubleLE(12 + 24 * i),
                    raw.readDoubleLE(20 + 24 * i)]);
            }
            return { kind: "waypoints", points };
        }
        case "lane_centers": {
            if (raw.length < 4)
                throw new ProtocolError("lane-center payload too short");
            const count = raw.readUInt32LE(0);
            if (raw.length !== 4 + 8 * count) {
                throw new ProtocolError(`lane-center payload is ${raw.length} bytes, expected ${4 + 8 * count}`);
            }
            const points = [];
            for (let i = 0; i < count; i++) {
                points.push([raw.readFloatLE(4 + 8 * i), raw.readFloatLE(8 + 8 * i)]);
            }
            return { kind: "lane_centers", points };
        }
        default:
            throw new ProtocolError(`topic ${topic} does not carry captures`);
    }
}
function decodeCommand(raw) {
    if (raw.length < 1)
        throw new ProtocolError("command payload missing its kind byte");
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
function encodeMessage(msg) {
    const body = encodePayload(msg.payload);
    if (body.length > exports.MAX_PAYLOAD) {
        throw new ProtocolError(`payload of ${body.length} bytes exceeds the cap`);
    }
    const head = Buffer.alloc(exports.HEADER_SIZE);
    exports.MAGIC.copy(head, 0);
    head.writeUInt8(exports.VERSION, 4);
    head.writeUInt8(msg.msgType, 5);
    head.writeUInt16LE(msg.streamId, 6);
    head.writeBigUInt64LE(msg.timestampUs, 8);
    head.writeUInt32LE(body.length, 16);
    return Buffer.concat([head, body]);
}
function decodeMessage(buf, captureTopic) {
    const probe = Math.min(buf.length, exports.MAGIC.length);
    if (!buf.subarray(0, probe).equals(exports.MAGIC.subarray(0, probe))) {
        throw new CorruptStreamError("bad magic; stream is corrupt");
    }
    if (buf.length < exports.HEADER_SIZE)
        return null;
    const version = buf.readUInt8(4);
    if (version !== exports.VERSION) {
        throw new CorruptStreamError(`unsupported protocol version ${version}`);
    }
    const rawType = buf.readUInt8(5);
    if (rawType > MsgType.ConfigPush) {
        throw new CorruptStreamError(`unknown message type ${rawType}`);
    }
    const streamId = buf.readUInt16LE(6);
    const timestampUs = buf.readBigUInt64LE(8);
    const length = buf.readUInt32LE(16);
    if (length > exports.MAX_PAYLOAD) {
        throw new CorruptStreamError(`declared payload of ${length} bytes exceeds the cap`);
    }
    const total = exports.HEADER_SIZE + length;
    if (buf.length < total)
        return null;
    const raw = Buffer.from(buf.subarray(exports.HEADER_SIZE, total));
    let payload;
    try {
        switch (rawType) {
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
    }
    catch (err) {
        if (err instanceof ProtocolError)
            err.consumed = total;
        throw err;
    }
    return { msg: { msgType: rawType, streamId, timestampUs, payload },
        consumed: total };
}
/** Incremental per-connection decoder; skips frames whose payload fails the
 * schema and refuses further input after header-level corruption. */
class StreamDecoder {
    captureTopic;
    dropped = 0;
    buf = Buffer.alloc(0);
    dead = false;
    constructor(captureTopic) {
        this.captureTopic = captureTopic;
    }
    feed(data) {
        if (this.dead)
            throw new CorruptStreamError("stream already declared corrupt");
        this.buf = this.buf.length ? Buffer.concat([this.buf, data]) : Buffer.from(data);
        const out = [];
        for (;;) {
            if (this.buf.length === 0)
                break;
            let result;
            try {
                result = decodeMessage(this.buf, this.captureTopic);
            }
            catch (err) {
                if (err instanceof ProtocolError) {
                    this.dropped += 1;
                    this.buf = this.buf.subarray(err.consumed);
                    continue;
                }
                this.dead = true;
                throw err;
            }
            if (result === null)
                break;
            out.push(result.msg);
            this.buf = this.buf.subarray(result.consumed);
        }
        return out;
    }
}
exports.StreamDecoder = StreamDecoder;
/** Reasons a payload is not a valid message on the topic (empty = valid). */
function validatePayload(payload, topic) {
    const problems = [];
    const expectKind = {
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
            if (payload.width < 1 || payload.height < 1)
                problems.push("bad dimensions");
            const expect = payload.width * payload.height * exports.BYTES_PER_PIXEL[payload.pixelFormat];
            if (payload.pixels.length !== expect)
                problems.push("pixel size mismatch");
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
                if (!Number.isFinite(v))
                    problems.push("non-finite state value");
            }
            break;
        case "waypoints":
            for (const [x, y, z] of payload.points) {
                if (![x, y, z].every(Number.isFinite))
                    problems.push("non-finite waypoint");
                else if (x <= 0)
                    problems.push("waypoint not ahead of the vehicle");
            }
            break;
        case "lane_centers":
            for (const [u, v] of payload.points) {
                if (!Number.isFinite(u) || !Number.isFinite(v))
                    problems.push("non-finite center");
            }
            break;
        case "steering":
            if (!Number.isFinite(payload.angle))
                problems.push("steering angle not finite");
            break;
        case "display": {
            const img = payload.image;
            const expect = img.width * img.height * exports.BYTES_PER_PIXEL[img.pixelFormat];
            if (img.pixels.length !== expect)
                problems.push("pixel size mismatch");
            break;
        }
    }
    return problems;
}
function isCommandTopic(topic) {
    return topic === "steering_cmd" || topic === "display_frame";
}
