"""Analytic flat-ground rendering of the track: RGB with rasterized lane
markings plus a ground-plane depth image.

There is no 3-D engine: marking polylines are projected through the pinhole
model and stroked one pixel wide without anti-aliasing, and depth is the
exact Z-distance (along the optical axis) of each pixel ray's ground-plane
intersection.  Rendering is deterministic: the same state yields
byte-identical images.

A rasterized pixel is kept only if the ground point its own ray sees lies
within ``marking_width`` of the marking's center line, so every lit marking
pixel inverse-projects back onto the painted stripe.  Rows whose rays never
reach the ground carry ``float32 max`` as an infinity sentinel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..camera import CameraModel, rot_z, vehicle_to_world, world_to_vehicle
from ..images import line_pixels as _line_pixels
from ..wire import ImageCapture
from .physics import VehicleState
from .track import Track

DEPTH_INF = float(np.finfo(np.float32).max)
NEAR_PLANE = 0.5
GROUND_COLOR = (45, 45, 48)
SKY_COLOR = (70, 90, 110)
MARKING_COLOR = (255, 255, 255)
_SAMPLE_STEP = 0.2  # m along the marking polylines


@dataclass
class RenderedFrame:
    rgb: np.ndarray    # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float32, DEPTH_INF above the horizon

    def rgb_capture(self) -> ImageCapture:
        h, w, _ = self.rgb.shape
        return ImageCapture.rgb8(w, h, self.rgb.tobytes())

    def depth_capture(self) -> ImageCapture:
        h, w = self.depth.shape
        return ImageCapture.depth_f32(w, h, self.depth.astype("<f4").tobytes())


def _ground_depth_grid(camera: CameraModel, state: VehicleState,
                       cam_height: float) -> np.ndarray:
    """Per-pixel distance along the optical axis to the ground plane (f64)."""
    rays = camera.pixel_rays()
    world_rot = rot_z(state.yaw) @ camera.vehicle_from_optical
    ray_z = rays @ world_rot[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(ray_z < -1e-12, -cam_height / ray_z, np.inf)
    t[t <= 0] = np.inf
    return t


def render_sensors(state: VehicleState, track: Track, camera: CameraModel,
                   draw_distance: float = 9.0) -> RenderedFrame:
    """Render the RGB and depth views of one camera for the given state."""
    h, w = camera.height, camera.width
    cam_world = vehicle_to_world(state.x, state.y, state.yaw,
                                 camera.position)[0]
    depth64 = _ground_depth_grid(camera, state, cam_world[2])

    rgb = np.empty((h, w, 3), dtype=np.uint8)
    sky = ~np.isfinite(depth64)
    rgb[~sky] = GROUND_COLOR
    rgb[sky] = SKY_COLOR

    s0, _ = track.nearest(state.x, state.y)
    span = (s0 - 8.0, s0 + draw_distance + 8.0)
    for boundary in (track.lane_width / 2.0, -track.lane_width / 2.0):
        pts_world = track.sample_offset_polyline(span[0], span[1], _SAMPLE_STEP, boundary)
        pts_cam = camera.vehicle_to_camera(
            world_to_vehicle(state.x, state.y, state.yaw, pts_world))
        z = pts_cam[:, 2]
        usable = (z > NEAR_PLANE) & (z <= draw_distance)
        uv = np.zeros((len(pts_cam), 2))
        if usable.any():
            uv[usable] = camera.project(pts_cam[usable])

        candidates: set[tuple[int, int]] = set()
        for i in range(len(pts_cam) - 1):
            if not (usable[i] and usable[i + 1]):
                continue
            u0, v0 = int(round(uv[i, 0])), int(round(uv[i, 1]))
            u1, v1 = int(round(uv[i + 1, 0])), int(round(uv[i + 1, 1]))
            if max(u0, u1) < 0 or min(u0, u1) >= w or max(v0, v1) < 0 or min(v0, v1) >= h:
                continue
            candidates.update(_line_pixels(u0, v0, u1, v1))

        if not candidates:
            continue
        px = np.array(sorted(candidates))
        inside = (px[:, 0] >= 0) & (px[:, 0] < w) & (px[:, 1] >= 0) & (px[:, 1] < h)
        px = px[inside]
        if len(px) == 0:
            continue
        depths = depth64[px[:, 1], px[:, 0]]
        finite = np.isfinite(depths)
        px, depths = px[finite], depths[finite]
        if len(px) == 0:
            continue
        ground_cam = camera.unproject(px[:, 0].astype(float),
                                      px[:, 1].astype(float), depths)
        ground_world = vehicle_to_world(
            state.x, state.y, state.yaw, camera.camera_to_vehicle(ground_cam))
        for (u, v), gw in zip(px, ground_world):
            _, lateral = track.nearest(gw[0], gw[1])
            if abs(lateral - boundary) <= track.marking_width:
                rgb[v, u] = MARKING_COLOR

    depth = np.where(np.isfinite(depth64), depth64, DEPTH_INF).astype(np.float32)
    return RenderedFrame(rgb=rgb, depth=depth)


def write_ppm(path, rgb: np.ndarray) -> None:
    """Binary PPM writer for the display file sink (no imaging deps)."""
    h, w, _ = rgb.shape
    with open(path, "wb") as f:
        f.write(f"P6 {w} {h} 255\n".encode("ascii"))
        f.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.readline().split()
        if header[0] != b"P6":
            raise ValueError("not a binary PPM file")
        w, h = int(header[1]), int(header[2])
        data = f.read(w * h * 3)
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)
