"""Trajectory visualization: forward-project planned waypoints onto the
camera image as a polyline and emit the result as a display frame."""

from __future__ import annotations

import numpy as np

from ..camera import CameraModel
from ..images import draw_line, rgb_to_array
from ..wire import DisplayFrame, ImageCapture, WaypointSet

OVERLAY_COLOR = (255, 60, 60)
_NEAR = 0.1
_COORD_LIMIT = 10_000


def project_waypoints(waypoints: WaypointSet,
                      camera: CameraModel) -> list[tuple[float, float]]:
    """Continuous pixel coords of the waypoints visible to the camera;
    points at or behind the image plane are omitted."""
    if not waypoints.points:
        return []
    pts_cam = camera.vehicle_to_camera(np.asarray(waypoints.points, dtype=float))
    visible = pts_cam[:, 2] > _NEAR
    uv = camera.project(pts_cam[visible])
    return [(float(u), float(v)) for u, v in uv]


def render_trajectory_overlay(img: ImageCapture, waypoints: WaypointSet,
                              camera: CameraModel) -> DisplayFrame:
    arr = rgb_to_array(img).copy()
    pix = [(int(round(u)), int(round(v))) for u, v in project_waypoints(waypoints, camera)
           if abs(u) < _COORD_LIMIT and abs(v) < _COORD_LIMIT]
    h, w = arr.shape[:2]
    for u, v in pix:
        if 0 <= u < w and 0 <= v < h:
            arr[v, u] = OVERLAY_COLOR
    for p0, p1 in zip(pix, pix[1:]):
        draw_line(arr, p0, p1, OVERLAY_COLOR)
    out = ImageCapture.rgb8(img.width, img.height, arr.tobytes())
    return DisplayFrame(out)


class VisualizerHandler:
    """Overlays the latest planned path onto each camera frame."""

    def __init__(self, camera: CameraModel):
        self.camera = camera
        self.last_waypoints = WaypointSet(())

    def process(self, port, payload, t_us):
        if port == "waypoints":
            self.last_waypoints = payload
            return []
        frame = render_trajectory_overlay(payload, self.last_waypoints, self.camera)
        return [("display_frame", frame)]


def create_config(manifest, vehicle_cfg) -> dict:
    from .planner import create_config as planner_config
    return planner_config(manifest, vehicle_cfg)


def main():
    from ._runtime import run_module
    from .planner import camera_from_params
    run_module(lambda params: VisualizerHandler(camera_from_params(params["camera"])))


if __name__ == "__main__":
    main()
