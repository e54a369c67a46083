"use strict";
/**
 * Module frame: the standardized lifecycle around a processing handler.
 *
 * Reads its bound endpoint map (and optional parameters) from the data
 * directory staged by the deployment, connects inputs out to producers,
 * listens for subscribers on its outputs, validates every message in
 * (C_in) and out (C_out), heartbeats to the supervisor at half the module
 * timeout, watches required-input recency, and re-reads the endpoints
 * file so dynamically added edges attach without a restart.  Behavior
 * mirrors the framework's native frame contract.
 */
var __createBinding = (this && this.__createBinding) || (Object.create ? (function(o, m, k, k2) {
    if (k2 === undefined) k2 = k;
    var desc = Object.getOwnPropertyDescriptor(m, k);
    if (!desc || ("get" in desc ? !m.__esModule : desc.writable || desc.configurable)) {
      desc = { enumerable: true, get: function() { return m[k]; } };
    }
    Object.defineProperty(o, k2, desc);
}) : (function(o, m, k, k2) {
    if (k2 === undefined) k2 = k;
    o[k2] = m[k];
}));
var __setModuleDefault = (this && this.__setModuleDefault) || (Object.create ? (function(o, v) {
    Object.defineProperty(o, "default", { enumerable: true, value: v });
}) : function(o, v) {
    o["default"] = v;
});
var __importStar = (this && this.__importStar) || (function () {
    var ownKeys = function(o) {
        ownKeys = Object.getOwnPropertyNames || function (o) {
            var ar = [];
            for (var k in o) if (Object.prototype.hasOwnProperty.call(o, k)) ar[ar.length] = k;
            return ar;
        };
        return ownKeys(o);
    };
    return function (mod) {
        if (mod && mod.__esModule) return mod;
        var result = {};
        if (mod != null) for (var k = ownKeys(mod), i = 0; i < k.length; i++) if (k[i] !== "default") __createBinding(result, mod, k[i]);
        __setModuleDefault(result, mod);
        return result;
    };
})();
Object.defineProperty(exports, "__esModule", { value: true });
exports.ModuleFrame = void 0;
exports.loadEndpoints = loadEndpoints;
exports.loadParams = loadParams;
exports.runModule = runModule;
const fs = __importStar(require("node:fs"));
const net = __importStar(require("node:net"));
const path = __importStar(require("node:path"));
const wire_1 = require("./wire");
const BACKOFF_BASE_MS = 100;
const BACKOFF_FACTOR = 2;
const BACKOFF_CAP_MS = 2000;
function loadEndpoints(dataDir) {
    const doc = JSON.parse(fs.readFileSync(path.join(dataDir, "endpoints.json"), "utf-8"));
    if (!doc.module || typeof doc.timeout_ms !== "number") {
        throw new Error("malformed endpoints file: module and timeout_ms required");
    }
    return {
        module: doc.module,
        timeout_ms: doc.timeout_ms,
        inputs: (doc.inputs ?? []).map((i) => ({
            port: i.port, topic: i.topic, host: i.host, tcp_port: i.tcp_port,
            stream_id: i.stream_id, required: i.required ?? true,
        })),
        outputs: (doc.outputs ?? []).map((o) => ({
            port: o.port, topic: o.topic, host: o.host, tcp_port: o.tcp_port,
        })),
        heartbeat: doc.heartbeat,
    };
}
function loadParams(dataDir) {
    const file = path.join(dataDir, "config.json");
    if (!fs.existsSync(file))
        return {};
    return JSON.parse(fs.readFileSync(file, "utf-8")).params ?? {};
}
class ReconnectingInput {
    bound;
    onMessage;
    onDecodeError;
    socket = null;
    connected = false;
    backoff = BACKOFF_BASE_MS;
    timer = null;
    stopped = false;
    constructor(bound, onMessage, onDecodeError) {
        this.bound = bound;
        this.onMessage = onMessage;
        this.onDecodeError = onDecodeError;
    }
    start() {
        this.connect();
    }
    connect() {
        if (this.stopped)
            return;
        const decoder = new wire_1.StreamDecoder((0, wire_1.isCommandTopic)(this.bound.topic) ? undefined : this.bound.topic);
        const sock = net.connect(this.bound.tcp_port, this.bound.host);
        this.socket = sock;
        sock.setNoDelay(true);
        sock.on("connect", () => {
            this.connected = true;
            this.backoff = BACKOFF_BASE_MS;
            // hello: fixes this edge's stream id at the producer
            sock.write((0, wire_1.encodeMessage)((0, wire_1.message)({ kind: "heartbeat" }, this.bound.stream_id)));
        });
        sock.on("data", (data) => {
            let msgs;
            try {
                msgs = decoder.feed(data);
            }
            catch {
                this.onDecodeError();
                sock.destroy();
                return;
            }
            for (const m of msgs)
                this.onMessage(this.bound.port, m);
        });
        sock.on("error", () => { });
        sock.on("close", () => {
            this.connected = false;
            this.socket = null;
            if (this.stopped)
                return;
            this.timer = setTimeout(() => this.connect(), this.backoff);
            this.backoff = Math.min(this.backoff * BACKOFF_FACTOR, BACKOFF_CAP_MS);
        });
    }
    stop() {
        this.stopped = true;
        if (this.timer)
            clearTimeout(this.timer);
        this.socket?.destroy();
    }
}
class ModuleFrame {
    dataDir;
    handler;
    endpoints;
    phase = "initializing";
    errors = {};
    inputs = new Map();
    inputTopics = new Map();
    lastSeenTs = new Map();
    lastInputWallMs = new Map();
    requiredPorts = new Set();
    servers = new Map();
    subscribers = new Map();
    outTopics = new Map();
    hbSocket = null;
    hbConnected = false;
    hbTimer = null;
    wdTimer = null;
    lastSimTs = 0n;
    endpointsMtime = 0;
    stopped = false;
    constructor(dataDir, handler) {
        this.dataDir = dataDir;
        this.handler = handler;
        this.endpoints = loadEndpoints(dataDir);
    }
    run() {
        for (const out of this.endpoints.outputs)
            this.openOutput(out);
        for (const inp of this.endpoints.inputs)
            this.addInput(inp);
        if (this.endpoints.heartbeat)
            this.connectHeartbeat();
        const hbInterval = this.endpoints.timeout_ms / 2;
        this.hbTimer = setInterval(() => this.sendHeartbeat(), hbInterval);
        this.sendHeartbeat();
        const wdInterval = Math.min(this.endpoints.timeout_ms / 4, 100);
        this.wdTimer = setInterval(() => this.periodic(), wdInterval);
        try {
            this.endpointsMtime =
                fs.statSync(path.join(this.dataDir, "endpoints.json")).mtimeMs;
        }
        catch { /* reload stays armed */ }
        this.phase = "running";
        return new Promise((resolve) => { this.resolveStop = resolve; });
    }
    resolveStop = null;
    count(category) {
        this.errors[category] = (this.errors[category] ?? 0) + 1;
    }
    addInput(bound) {
        this.inputTopics.set(bound.port, bound.topic);
        this.lastInputWallMs.set(bound.port, Date.now());
        if (bound.required)
            this.requiredPorts.add(bound.port);
        const input = new ReconnectingInput(bound, (port, msg) => this.onInput(port, msg), () => this.count("c_in"));
        this.inputs.set(bound.port, input);
        input.start();
    }
    openOutput(out) {
        this.outTopics.set(out.port, out.topic);
        this.subscribers.set(out.port, []);
        const server = net.createServer((socket) => {
            socket.setNoDelay(true);
            const sub = { socket, streamId: 0 };
            this.subscribers.get(out.port).push(sub);
            const decoder = new wire_1.StreamDecoder();
            socket.on("data", (data) => {
                try {
                    for (const m of decoder.feed(data)) {
                        if (m.msgType === wire_1.MsgType.Heartbeat)
                            sub.streamId = m.streamId;
                    }
                }
                catch {
                    socket.destroy();
                }
            });
            const drop = () => {
                const subs = this.subscribers.get(out.port);
                const at = subs.indexOf(sub);
                if (at >= 0)
                    subs.splice(at, 1);
            };
            socket.on("close", drop);
            socket.on("error", () => socket.destroy());
        });
        server.listen(out.tcp_port, out.host);
        this.servers.set(out.port, server);
    }
    connectHeartbeat() {
        if (this.stopped || !this.endpoints.heartbeat)
            return;
        const hb = this.endpoints.heartbeat;
        const sock = net.connect(hb.tcp_port, hb.host);
        sock.setNoDelay(true);
        sock.on("connect", () => { this.hbConnected = true; });
        sock.on("error", () => { });
        sock.on("close", () => {
            this.hbConnected = false;
            this.hbSocket = null;
            if (!this.stopped)
                setTimeout(() => this.connectHeartbeat(), 500);
        });
        this.hbSocket = sock;
    }
    sendHeartbeat() {
        if (!this.endpoints.heartbeat || !this.hbConnected || !this.hbSocket)
            return;
        this.hbSocket.write((0, wire_1.encodeMessage)((0, wire_1.message)({ kind: "heartbeat" }, this.endpoints.heartbeat.stream_id, this.lastSimTs)));
    }
    onInput(port, msg) {
        if (msg.msgType === wire_1.MsgType.Heartbeat)
            return;
        const topic = this.inputTopics.get(port);
        if (!topic)
            return;
        const problems = (0, wire_1.validatePayload)(msg.payload, topic);
        const last = this.lastSeenTs.get(port);
        if (last !== undefined && msg.timestampUs < last) {
            problems.push("timestamp regression");
        }
        if (problems.length) {
            this.count("c_in");
            return;
        }
        this.lastSeenTs.set(port, msg.timestampUs);
        if (msg.timestampUs > this.lastSimTs)
            this.lastSimTs = msg.timestampUs;
        this.lastInputWallMs.set(port, Date.now());
        let outputs;
        try {
            outputs = this.handler(port, msg.payload, msg.timestampUs);
        }
        catch {
            this.count("handler");
            return;
        }
        for (const [outPort, payload] of outputs ?? []) {
            this.emit(outPort, payload, msg.timestampUs);
        }
    }
    emit(outPort, payload, timestampUs) {
        const topic = this.outTopics.get(outPort);
        if (!topic || (0, wire_1.validatePayload)(payload, topic).length) {
            this.count("c_out");
            return false;
        }
        const body = (0, wire_1.encodeMessage)((0, wire_1.message)(payload, 0, timestampUs));
        for (const sub of [...(this.subscribers.get(outPort) ?? [])]) {
            // restamp per subscriber with its hello id
            const frame = Buffer.from(body);
            frame.writeUInt16LE(sub.streamId, 6);
            sub.socket.write(frame);
        }
        return true;
    }
    periodic() {
        this.reloadEndpoints();
        const now = Date.now();
        const late = [];
        for (const port of this.requiredPorts) {
            const lastMs = this.lastInputWallMs.get(port) ?? 0;
            if (now - lastMs > this.endpoints.timeout_ms)
                late.push(port);
        }
        if (this.phase === "running" && late.length)
            this.phase = "degraded";
        else if (this.phase === "degraded" && !late.length)
            this.phase = "running";
        this.writeStatus(late);
    }
    reloadEndpoints() {
        const file = path.join(this.dataDir, "endpoints.json");
        let mtime;
        try {
            mtime = fs.statSync(file).mtimeMs;
        }
        catch {
            return;
        }
        if (mtime === this.endpointsMtime)
            return;
        this.endpointsMtime = mtime;
        let latest;
        try {
            latest = loadEndpoints(this.dataDir);
        }
        catch {
            return;
        }
        for (const inp of latest.inputs) {
            if (!this.inputs.has(inp.port))
                this.addInput(inp);
        }
    }
    writeStatus(late) {
        const doc = {
            module: this.endpoints.module,
            pid: process.pid,
            phase: this.phase,
            errors: this.errors,
            timed_out_inputs: late,
            inputs_connected: Object.fromEntries([...this.inputs.entries()].map(([p, i]) => [p, i.connected])),
            heartbeat_connected: this.hbConnected,
            updated: Date.now() / 1000,
        };
        const tmp = path.join(this.dataDir, "status.json.tmp");
        try {
            fs.writeFileSync(tmp, JSON.stringify(doc, null, 2));
            fs.renameSync(tmp, path.join(this.dataDir, "status.json"));
        }
        catch { /* status is best-effort */ }
    }
    stop() {
        if (this.stopped)
            return;
        this.stopped = true;
        this.phase = "stopped";
        if (this.hbTimer)
            clearInterval(this.hbTimer);
        if (this.wdTimer)
            clearInterval(this.wdTimer);
        for (const input of this.inputs.values())
            input.stop();
        for (const subs of this.subscribers.values()) {
            for (const sub of subs)
                sub.socket.destroy();
        }
        for (const server of this.servers.values())
            server.close();
        this.hbSocket?.destroy();
        this.writeStatus([]);
        this.resolveStop?.();
    }
}
exports.ModuleFrame = ModuleFrame;
/** Standard module entry: build the handler from staged parameters and run
 * the frame until SIGTERM/SIGINT. */
async function runModule(factory) {
    const dataDir = process.argv[2];
    if (!dataDir) {
        process.stderr.write(`usage: ${process.argv[1]} <data_dir>\n`);
        process.exit(2);
    }
    const frame = new ModuleFrame(dataDir, factory(loadParams(dataDir)));
    process.on("SIGTERM", () => frame.stop());
    process.on("SIGINT", () => frame.stop());
    await frame.run();
}
