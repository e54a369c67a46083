"""Kinematic single-track (bicycle) vehicle model.

Speed is an external input: only steering is actuated, so the integrator
never changes it.  The update is explicit Euler with the heading advanced
after the position, which keeps a zero-steer step exactly collinear with
the current heading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    r = math.fmod(a + math.pi, 2.0 * math.pi)
    if r <= 0.0:
        r += 2.0 * math.pi
    return r - math.pi


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    yaw: float
    speed: float
    steering_angle: float = 0.0


def step_physics(
    state: VehicleState,
    steering_cmd: float,
    v: float,
    dt: float,
    wheelbase: float,
    max_steering: Optional[float] = None,
) -> VehicleState:
    """Advance one fixed step.

    ``steering_cmd`` is clamped into ``[-max_steering, +max_steering]`` when
    a limit is given; a non-finite command degrades to zero rather than
    poisoning the state.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    delta = steering_cmd if math.isfinite(steering_cmd) else 0.0
    if max_steering is not None:
        delta = max(-max_steering, min(max_steering, delta))
    x = state.x + v * math.cos(state.yaw) * dt
    y = state.y + v * math.sin(state.yaw) * dt
    yaw = state.yaw + (v / wheelbase) * math.tan(delta) * dt
    if not -math.pi < yaw <= math.pi:
        yaw = wrap_angle(yaw)
    return replace(state, x=x, y=y, yaw=yaw, speed=v, steering_angle=delta)
