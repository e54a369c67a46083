/**
 * Trajectory visualizer module: joins the latest planned waypoints with
 * each camera frame, forward-projects them through the pinhole model from
 * the staged camera parameters, and emits the overlay as a display frame.
 */

import { runModule } from "./frame";
import { ImageCapture, Payload, PixelFormat, WaypointSet } from "./wire";

const OVERLAY: [number, number, number] = [255, 60, 60];
const NEAR = 0.1;

type Mat3 = number[][];

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: Mat3 = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
    }
  }
  return out;
}

function rotZ(a: number): Mat3 {
  const c = Math.cos(a), s = Math.sin(a);
  return [[c, -s, 0], [s, c, 0], [0, 0, 1]];
}

function rotY(a: number): Mat3 {
  const c = Math.cos(a), s = Math.sin(a);
  return [[c, 0, s], [0, 1, 0], [-s, 0, c]];
}

function rotX(a: number): Mat3 {
  const c = Math.cos(a), s = Math.sin(a);
  return [[1, 0, 0], [0, c, -s], [0, s, c]];
}

// Optical axes in the sensor body frame: x=-left, y=-up, z=+forward.
const BODY_FROM_OPTICAL: Mat3 = [[0, 0, 1], [-1, 0, 0], [0, -1, 0]];

export class Camera {
  readonly focal: number;
  readonly cx: number;
  readonly cy: number;
  private rot: Mat3; // vehicle_from_optical
  private pos: [number, number, number];

  constructor(params: {
    width: number; height: number; fov_deg: number;
    position: number[]; orientation: number[];
  }) {
    this.focal = params.width / (2 * Math.tan((params.fov_deg * Math.PI) / 360));
    this.cx = params.width / 2;
    this.cy = params.height / 2;
    const [yaw, pitch, roll] = params.orientation;
    this.rot = matMul(matMul(rotZ(yaw), rotY(pitch)),
                      matMul(rotX(roll), BODY_FROM_OPTICAL));
    this.pos = [params.position[0], params.position[1], params.position[2]];
  }

  /** Vehicle-frame point to continuous pixel coords; null when behind. */
  project(p: [number, number, number]): [number, number] | null {
    const d = [p[0] - this.pos[0], p[1] - this.pos[1], p[2] - this.pos[2]];
    // optical = rot^T * d
    const x = this.rot[0][0] * d[0] + this.rot[1][0] * d[1] + this.rot[2][0] * d[2];
    const y = this.rot[0][1] * d[0] + this.rot[1][1] * d[1] + this.rot[2][1] * d[2];
    const z = this.rot[0][2] * d[0] + this.rot[1][2] * d[1] + this.rot[2][2] * d[2];
    if (z <= NEAR) return null;
    return [this.cx + (x * this.focal) / z, this.cy + (y * this.focal) / z];
  }
}

function putPixel(img: Buffer, width: number, height: number,
                  u: number, v: number) {
  if (u < 0 || v < 0 || u >= width || v >= height) return;
  const at = (v * width + u) * 3;
  img[at] = OVERLAY[0];
  img[at + 1] = OVERLAY[1];
  img[at + 2] = OVERLAY[2];
}

function drawLine(img: Buffer, width: number, height: number,
                  u0: number, v0: number, u1: number, v1: number) {
  const du = Math.abs(u1 - u0), dv = -Math.abs(v1 - v0);
  const su = u0 < u1 ? 1 : -1, sv = v0 < v1 ? 1 : -1;
  let err = du + dv;
  let u = u0, v = v0;
  for (;;) {
    putPixel(img, width, height, u, v);
    if (u === u1 && v === v1) return;
    const e2 = 2 * err;
    if (e2 >= dv) { err += dv; u += su; }
    if (e2 <= du) { err += du; v += sv; }
  }
}

export function renderOverlay(frame: ImageCapture, waypoints: WaypointSet,
                              camera: Camera): ImageCapture {
  const pixels = Buffer.from(frame.pixels);
  const pts: Array<[number, number]> = [];
  for (const wp of waypoints.points) {
    const uv = camera.project(wp);
    if (uv && Math.abs(uv[0]) < 10000 && Math.abs(uv[1]) < 10000) {
      pts.push([Math.round(uv[0]), Math.round(uv[1])]);
    }
  }
  for (const [u, v] of pts) putPixel(pixels, frame.width, frame.height, u, v);
  for (let i = 1; i < pts.length; i++) {
    drawLine(pixels, frame.width, frame.height,
             pts[i - 1][0], pts[i - 1][1], pts[i][0], pts[i][1]);
  }
  return { ...frame, pixels };
}

export function makeHandler(params: Record<string, any>) {
  const camera = new Camera(params.camera);
  let lastWaypoints: WaypointSet = { kind: "waypoints", points: [] };
  return (port: string, payload: Payload, _tUs: bigint): Array<[string, Payload]> => {
    if (payload.kind === "waypoints") {
      lastWaypoints = payload;
      return [];
    }
    if (payload.kind !== "image" || payload.pixelFormat !== PixelFormat.RGB8) {
      return [];
    }
    const overlay = renderOverlay(payload, lastWaypoints, camera);
    return [["display_frame", { kind: "display", image: overlay }]];
  };
}

if (require.main === module) {
  runModule(makeHandler).catch((err) => {
    process.stderr.write(`${err}\n`);
    process.exit(1);
  });
}
