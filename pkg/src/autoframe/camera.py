"""Pinhole camera model shared by the simulator renderer, the motion
planner and the trajectory overlay.

Conventions:

- Optical frame: x right, y down, z forward (along the optical axis).
- A sensor pose with zero orientation looks along the vehicle's +x axis.
- Image coordinates are continuous; the integer pixel index names the ray
  through that pixel, with the principal point at (width/2, height/2).
- Focal length in pixels derives from the horizontal field of view:
  ``f = width / (2 tan(fov/2))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import CameraParams, Pose, SensorSpec

# Optical axes expressed in the sensor body frame (x forward, y left, z up):
# optical x = -left, optical y = -up, optical z = +forward.
_BODY_FROM_OPTICAL = np.array([
    [0.0, 0.0, 1.0],
    [-1.0, 0.0, 0.0],
    [0.0, -1.0, 0.0],
])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass(frozen=True)
class CameraModel:
    width: int
    height: int
    focal_px: float
    position: np.ndarray        # mount position in the vehicle frame
    vehicle_from_optical: np.ndarray  # 3x3 rotation

    @classmethod
    def from_spec(cls, spec: SensorSpec) -> "CameraModel":
        return cls.from_params(spec.camera(), spec.pose)

    @classmethod
    def from_params(cls, cam: CameraParams, pose: Pose) -> "CameraModel":
        yaw, pitch, roll = pose.orientation
        body_in_vehicle = rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
        return cls(
            width=cam.width,
            height=cam.height,
            focal_px=cam.focal_px,
            position=np.asarray(pose.position, dtype=float),
            vehicle_from_optical=body_in_vehicle @ _BODY_FROM_OPTICAL,
        )

    @property
    def cx(self) -> float:
        return self.width / 2.0

    @property
    def cy(self) -> float:
        return self.height / 2.0

    def vehicle_to_camera(self, pts: np.ndarray) -> np.ndarray:
        """Vehicle-frame points (N,3) to optical-frame coordinates."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (pts - self.position) @ self.vehicle_from_optical

    def camera_to_vehicle(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return pts @ self.vehicle_from_optical.T + self.position

    def project(self, pts_cam: np.ndarray) -> np.ndarray:
        """Optical-frame points (N,3) to continuous pixel coords (N,2).

        Callers must exclude points at or behind the image plane (z <= 0);
        the rays through them do not intersect the image.
        """
        pts_cam = np.atleast_2d(np.asarray(pts_cam, dtype=float))
        z = pts_cam[:, 2]
        u = self.cx + pts_cam[:, 0] * self.focal_px / z
        v = self.cy + pts_cam[:, 1] * self.focal_px / z
        return np.stack([u, v], axis=1)

    def unproject(self, u: np.ndarray, v: np.ndarray, depth: np.ndarray) -> np.ndarray:
        """Pixel coords plus Z-depth (along the optical axis) to optical-frame
        points (N,3).  Linear because depth is axis-aligned, not ray length."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        depth = np.asarray(depth, dtype=float)
        x = (u - self.cx) * depth / self.focal_px
        y = (v - self.cy) * depth / self.focal_px
        return np.stack([x, y, depth], axis=-1)

    def pixel_rays(self) -> np.ndarray:
        """Optical-frame direction (H,W,3) of every pixel, z normalized to 1."""
        us = np.arange(self.width, dtype=float)
        vs = np.arange(self.height, dtype=float)
        x = (us[None, :] - self.cx) / self.focal_px
        y = (vs[:, None] - self.cy) / self.focal_px
        rays = np.empty((self.height, self.width, 3))
        rays[:, :, 0] = x
        rays[:, :, 1] = y
        rays[:, :, 2] = 1.0
        return rays


def vehicle_to_world(x: float, y: float, yaw: float, pts: np.ndarray) -> np.ndarray:
    """Planar pose transform for (N,3) points (z passes through)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return pts @ rot_z(yaw).T + np.array([x, y, 0.0])


def world_to_vehicle(x: float, y: float, yaw: float, pts: np.ndarray) -> np.ndarray:
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    return (pts - np.array([x, y, 0.0])) @ rot_z(yaw)
