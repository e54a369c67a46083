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

import * as fs from "node:fs";
import * as net from "node:net";
import * as path from "node:path";

import {
  Message,
  MsgType,
  Payload,
  StreamDecoder,
  TopicType,
  encodeMessage,
  isCommandTopic,
  message,
  validatePayload,
} from "./wire";

const BACKOFF_BASE_MS = 100;
const BACKOFF_FACTOR = 2;
const BACKOFF_CAP_MS = 2000;

export interface BoundInput {
  port: string;
  topic: TopicType;
  host: string;
  tcp_port: number;
  stream_id: number;
  required: boolean;
}

export interface BoundOutput {
  port: string;
  topic: TopicType;
  host: string;
  tcp_port: number;
}

export interface Endpoints {
  module: string;
  timeout_ms: number;
  inputs: BoundInput[];
  outputs: BoundOutput[];
  heartbeat?: { host: string; tcp_port: number; stream_id: number };
}

export function loadEndpoints(dataDir: string): Endpoints {
  const doc = JSON.parse(
    fs.readFileSync(path.join(dataDir, "endpoints.json"), "utf-8"));
  if (!doc.module || typeof doc.timeout_ms !== "number") {
    throw new Error("malformed endpoints file: module and timeout_ms required");
  }
  return {
    module: doc.module,
    timeout_ms: doc.timeout_ms,
    inputs: (doc.inputs ?? []).map((i: any) => ({
      port: i.port, topic: i.topic, host: i.host, tcp_port: i.tcp_port,
      stream_id: i.stream_id, required: i.required ?? true,
    })),
    outputs: (doc.outputs ?? []).map((o: any) => ({
      port: o.port, topic: o.topic, host: o.host, tcp_port: o.tcp_port,
    })),
    heartbeat: doc.heartbeat,
  };
}

export function loadParams(dataDir: string): Record<string, any> {
  const file = path.join(dataDir, "config.json");
  if (!fs.existsSync(file)) return {};
  return JSON.parse(fs.readFileSync(file, "utf-8")).params ?? {};
}

export type Handler = (
  port: string,
  payload: Payload,
  timestampUs: bigint,
) => Array<[string, Payload]>;

interface Subscriber {
  socket: net.Socket;
  streamId: number;
}

class ReconnectingInput {
  socket: net.Socket | null = null;
  connected = false;
  private backoff = BACKOFF_BASE_MS;
  private timer: NodeJS.Timeout | null = null;
  private stopped = false;

  constructor(
    private bound: BoundInput,
    private onMessage: (port: string, msg: Message) => void,
    private onDecodeError: () => void,
  ) {}

  start() {
    this.connect();
  }

  private connect() {
    if (this.stopped) return;
    const decoder = new StreamDecoder(
      isCommandTopic(this.bound.topic) ? undefined : this.bound.topic);
    const sock = net.connect(this.bound.tcp_port, this.bound.host);
    this.socket = sock;
    sock.setNoDelay(true);
    sock.on("connect", () => {
      this.connected = true;
      this.backoff = BACKOFF_BASE_MS;
      // hello: fixes this edge's stream id at the producer
      sock.write(encodeMessage(message({ kind: "heartbeat" },
                                       this.bound.stream_id)));
    });
    sock.on("data", (data: Buffer) => {
      let msgs: Message[];
      try {
        msgs = decoder.feed(data);
      } catch {
        this.onDecodeError();
        sock.destroy();
        return;
      }
      for (const m of msgs) this.onMessage(this.bound.port, m);
    });
    sock.on("error", () => { /* close follows */ });
    sock.on("close", () => {
      this.connected = false;
      this.socket = null;
      if (this.stopped) return;
      this.timer = setTimeout(() => this.connect(), this.backoff);
      this.backoff = Math.min(this.backoff * BACKOFF_FACTOR, BACKOFF_CAP_MS);
    });
  }

  stop() {
    this.stopped = true;
    if (this.timer) clearTimeout(this.timer);
    this.socket?.destroy();
  }
}

export class ModuleFrame {
  readonly endpoints: Endpoints;
  phase: "initializing" | "running" | "degraded" | "stopped" = "initializing";
  errors: Record<string, number> = {};

  private inputs = new Map<string, ReconnectingInput>();
  private inputTopics = new Map<string, TopicType>();
  private lastSeenTs = new Map<string, bigint>();
  private lastInputWallMs = new Map<string, number>();
  private requiredPorts = new Set<string>();
  private servers = new Map<string, net.Server>();
  private subscribers = new Map<string, Subscriber[]>();
  private outTopics = new Map<string, TopicType>();
  private hbSocket: net.Socket | null = null;
  private hbConnected = false;
  private hbTimer: NodeJS.Timeout | null = null;
  private wdTimer: NodeJS.Timeout | null = null;
  private lastSimTs = 0n;
  private endpointsMtime = 0;
  private stopped = false;

  constructor(private dataDir: string, private handler: Handler) {
    this.endpoints = loadEndpoints(dataDir);
  }

  run(): Promise<void> {
    for (const out of this.endpoints.outputs) this.openOutput(out);
    for (const inp of this.endpoints.inputs) this.addInput(inp);
    if (this.endpoints.heartbeat) this.connectHeartbeat();
    const hbInterval = this.endpoints.timeout_ms / 2;
    this.hbTimer = setInterval(() => this.sendHeartbeat(), hbInterval);
    this.sendHeartbeat();
    const wdInterval = Math.min(this.endpoints.timeout_ms / 4, 100);
    this.wdTimer = setInterval(() => this.periodic(), wdInterval);
    try {
      this.endpointsMtime =
        fs.statSync(path.join(this.dataDir, "endpoints.json")).mtimeMs;
    } catch { /* reload stays armed */ }
    this.phase = "running";
    return new Promise((resolve) => { this.resolveStop = resolve; });
  }

  private resolveStop: (() => void) | null = null;

  private count(category: string) {
    this.errors[category] = (this.errors[category] ?? 0) + 1;
  }

  private addInput(bound: BoundInput) {
    this.inputTopics.set(bound.port, bound.topic);
    this.lastInputWallMs.set(bound.port, Date.now());
    if (bound.required) this.requiredPorts.add(bound.port);
    const input = new ReconnectingInput(
      bound,
      (port, msg) => this.onInput(port, msg),
      () => this.count("c_in"),
    );
    this.inputs.set(bound.port, input);
    input.start();
  }

  private openOutput(out: BoundOutput) {
    this.outTopics.set(out.port, out.topic);
    this.subscribers.set(out.port, []);
    const server = net.createServer((socket) => {
      socket.setNoDelay(true);
      const sub: Subscriber = { socket, streamId: 0 };
      this.subscribers.get(out.port)!.push(sub);
      const decoder = new StreamDecoder();
      socket.on("data", (data: Buffer) => {
        try {
          for (const m of decoder.feed(data)) {
            if (m.msgType === MsgType.Heartbeat) sub.streamId = m.streamId;
          }
        } catch {
          socket.destroy();
        }
      });
      const drop = () => {
        const subs = this.subscribers.get(out.port)!;
        const at = subs.indexOf(sub);
        if (at >= 0) subs.splice(at, 1);
      };
      socket.on("close", drop);
      socket.on("error", () => socket.destroy());
    });
    server.listen(out.tcp_port, out.host);
    this.servers.set(out.port, server);
  }

  private connectHeartbeat() {
    if (this.stopped || !this.endpoints.heartbeat) return;
    const hb = this.endpoints.heartbeat;
    const sock = net.connect(hb.tcp_port, hb.host);
    sock.setNoDelay(true);
    sock.on("connect", () => { this.hbConnected = true; });
    sock.on("error", () => { /* close follows */ });
    sock.on("close", () => {
      this.hbConnected = false;
      this.hbSocket = null;
      if (!this.stopped) setTimeout(() => this.connectHeartbeat(), 500);
    });
    this.hbSocket = sock;
  }

  private sendHeartbeat() {
    if (!this.endpoints.heartbeat || !this.hbConnected || !this.hbSocket) return;
    this.hbSocket.write(encodeMessage(
      message({ kind: "heartbeat" }, this.endpoints.heartbeat.stream_id,
              this.lastSimTs)));
  }

  private onInput(port: string, msg: Message) {
    if (msg.msgType === MsgType.Heartbeat) return;
    const topic = this.inputTopics.get(port);
    if (!topic) return;
    const problems = validatePayload(msg.payload, topic);
    const last = this.lastSeenTs.get(port);
    if (last !== undefined && msg.timestampUs < last) {
      problems.push("timestamp regression");
    }
    if (problems.length) {
      this.count("c_in");
      return;
    }
    this.lastSeenTs.set(port, msg.timestampUs);
    if (msg.timestampUs > this.lastSimTs) this.lastSimTs = msg.timestampUs;
    this.lastInputWallMs.set(port, Date.now());
    let outputs: Array<[string, Payload]>;
    try {
      outputs = this.handler(port, msg.payload, msg.timestampUs);
    } catch {
      this.count("handler");
      return;
    }
    for (const [outPort, payload] of outputs ?? []) {
      this.emit(outPort, payload, msg.timestampUs);
    }
  }

  emit(outPort: string, payload: Payload, timestampUs: bigint): boolean {
    const topic = this.outTopics.get(outPort);
    if (!topic || validatePayload(payload, topic).length) {
      this.count("c_out");
      return false;
    }
    const body = encodeMessage(message(payload, 0, timestampUs));
    for (const sub of [...(this.subscribers.get(outPort) ?? [])]) {
      // restamp per subscriber with its hello id
      const frame = Buffer.from(body);
      frame.writeUInt16LE(sub.streamId, 6);
      sub.socket.write(frame);
    }
    return true;
  }

  private periodic() {
    this.reloadEndpoints();
    const now = Date.now();
    const late: string[] = [];
    for (const port of this.requiredPorts) {
      const lastMs = this.lastInputWallMs.get(port) ?? 0;
      if (now - lastMs > this.endpoints.timeout_ms) late.push(port);
    }
    if (this.phase === "running" && late.length) this.phase = "degraded";
    else if (this.phase === "degraded" && !late.length) this.phase = "running";
    this.writeStatus(late);
  }

  private reloadEndpoints() {
    const file = path.join(this.dataDir, "endpoints.json");
    let mtime: number;
    try {
      mtime = fs.statSync(file).mtimeMs;
    } catch {
      return;
    }
    if (mtime === this.endpointsMtime) return;
    this.endpointsMtime = mtime;
    let latest: Endpoints;
    try {
      latest = loadEndpoints(this.dataDir);
    } catch {
      return;
    }
    for (const inp of latest.inputs) {
      if (!this.inputs.has(inp.port)) this.addInput(inp);
    }
  }

  private writeStatus(late: string[]) {
    const doc = {
      module: this.endpoints.module,
      pid: process.pid,
      phase: this.phase,
      errors: this.errors,
      timed_out_inputs: late,
      inputs_connected: Object.fromEntries(
        [...this.inputs.entries()].map(([p, i]) => [p, i.connected])),
      heartbeat_connected: this.hbConnected,
      updated: Date.now() / 1000,
    };
    const tmp = path.join(this.dataDir, "status.json.tmp");
    try {
      fs.writeFileSync(tmp, JSON.stringify(doc, null, 2));
      fs.renameSync(tmp, path.join(this.dataDir, "status.json"));
    } catch { /* status is best-effort */ }
  }

  stop() {
    if (this.stopped) return;
    this.stopped = true;
    this.phase = "stopped";
    if (this.hbTimer) clearInterval(this.hbTimer);
    if (this.wdTimer) clearInterval(this.wdTimer);
    for (const input of this.inputs.values()) input.stop();
    for (const subs of this.subscribers.values()) {
      for (const sub of subs) sub.socket.destroy();
    }
    for (const server of this.servers.values()) server.close();
    this.hbSocket?.destroy();
    this.writeStatus([]);
    this.resolveStop?.();
  }
}

/** Standard module entry: build the handler from staged parameters and run
 * the frame until SIGTERM/SIGINT. */
export async function runModule(
  factory: (params: Record<string, any>) => Handler,
): Promise<void> {
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
