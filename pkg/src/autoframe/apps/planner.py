"""Motion planning: lift detected lane centers into vehicle-frame waypoints.

Each center pixel is paired with the depth image's Z-distance at that
pixel and pushed through the inverse pinhole model, then the camera mount
pose maps it into the vehicle frame.  Pixels with no usable depth (the
infinity sentinel, or anything outside the image) are dropped.
"""

from __future__ import annotations

import math

from ..camera import CameraModel
from ..images import depth_to_array
from ..wire import ImageCapture, LaneCenterSet, WaypointSet

# f32-max encodes "no ground along this ray"; anything close is unusable.
_DEPTH_VALID_MAX = 1e30


def plan_waypoints(centers: LaneCenterSet, depth: ImageCapture,
                   camera: CameraModel) -> WaypointSet:
    if (depth.width, depth.height) != (camera.width, camera.height):
        raise ValueError(
            f"depth image {depth.width}x{depth.height} does not match the "
            f"camera model {camera.width}x{camera.height}")
    grid = depth_to_array(depth)
    picked: list[tuple[float, tuple[float, float, float]]] = []
    for u, v in centers.points:
        ui, vi = int(round(u)), int(round(v))
        if not (0 <= ui < depth.width and 0 <= vi < depth.height):
            continue
        d = float(grid[vi, ui])
        if not math.isfinite(d) or d <= 0.0 or d >= _DEPTH_VALID_MAX:
            continue
        cam_pt = camera.unproject(u, v, d)
        x, y, z = camera.camera_to_vehicle(cam_pt)[0]
        if x <= 0.0:
            continue
        picked.append((d, (float(x), float(y), float(z))))
    picked.sort(key=lambda item: item[0])
    return WaypointSet(tuple(pt for _, pt in picked))


class PlannerHandler:
    """Joins the latest depth image with each lane-center set."""

    def __init__(self, camera: CameraModel):
        self.camera = camera
        self.last_depth: ImageCapture | None = None

    def process(self, port, payload, t_us):
        if port == "image_depth":
            self.last_depth = payload
            return []
        if self.last_depth is None:
            return []
        return [("waypoints", plan_waypoints(payload, self.last_depth, self.camera))]


def create_config(manifest, vehicle_cfg) -> dict:
    from ..config import ConfigError, SensorKind
    cameras = vehicle_cfg.sensors_of(SensorKind.RGB_CAMERA)
    if not cameras:
        raise ConfigError("no rgb_camera sensor; the planner needs the camera "
                          "optical model (fov, size, pose)", path="sensors")
    cam = cameras[0]
    return {"camera": {
        "width": cam.camera().width,
        "height": cam.camera().height,
        "fov_deg": cam.camera().fov_deg,
        "position": list(cam.pose.position),
        "orientation": list(cam.pose.orientation),
    }}


def camera_from_params(doc: dict) -> CameraModel:
    from ..config import CameraParams, Pose
    cam = CameraParams(int(doc["width"]), int(doc["height"]),
                       float(doc["fov_deg"]), rate_hz=1.0)
    pose = Pose(tuple(doc["position"]), tuple(doc["orientation"]))
    return CameraModel.from_params(cam, pose)


def main():
    from ._runtime import run_module
    run_module(lambda params: PlannerHandler(camera_from_params(params["camera"])))


if __name__ == "__main__":
    main()
