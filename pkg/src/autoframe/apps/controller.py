"""Path-tracking control: constant-steer MPC feed-forward plus PID feedback.

The feed-forward part evaluates a grid of candidate steering angles by
rolling the kinematic single-track model over a short horizon and scoring
the squared lateral distance to the waypoint polyline plus a steering
effort term; ties go to the smaller steering magnitude.  The PID part
compensates the residual tracking error, measured as the lateral offset of
the waypoint nearest the lookahead distance, with an anti-windup clamp on
the integral.  Positive error (path left of the vehicle) steers left.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

from ..wire import StateCapture, SteeringCommand, WaypointSet


@dataclass(frozen=True)
class ControllerGains:
    kp: float = 0.4
    ki: float = 0.05
    kd: float = 0.1
    lookahead_m: float = 5.0
    integral_limit: float = 1.0
    horizon_steps: int = 10
    horizon_dt: float = 0.1
    candidate_count: int = 21
    effort_weight: float = 0.05

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.candidate_count < 3 or self.candidate_count % 2 == 0:
            raise ValueError("candidate_count must be odd and >= 3")


@dataclass(frozen=True)
class ControllerMemory:
    integral: float = 0.0
    prev_error: Optional[float] = None
    prev_t_us: Optional[int] = None


def _point_polyline_dist(x: float, y: float,
                         pts: Sequence[tuple[float, float]]) -> float:
    best = math.inf
    for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
        dx, dy = x1 - x0, y1 - y0
        seg_len2 = dx * dx + dy * dy
        if seg_len2 == 0.0:
            t = 0.0
        else:
            t = max(0.0, min(1.0, ((x - x0) * dx + (y - y0) * dy) / seg_len2))
        ex, ey = x - (x0 + t * dx), y - (y0 + t * dy)
        d = ex * ex + ey * ey
        if d < best:
            best = d
    return math.sqrt(best)


def candidate_costs(waypoints: Sequence[tuple[float, float]], speed: float,
                    wheelbase: float, max_steering: float,
                    gains: ControllerGains) -> list[tuple[float, float]]:
    """(candidate steering, cost) for the whole grid, in grid order."""
    deltas = [(-max_steering + i * 2.0 * max_steering / (gains.candidate_count - 1))
              for i in range(gains.candidate_count)]
    out = []
    for delta in deltas:
        x = y = yaw = 0.0
        tan_d = math.tan(delta)
        cost = gains.effort_weight * delta * delta
        for _ in range(gains.horizon_steps):
            x += speed * math.cos(yaw) * gains.horizon_dt
            y += speed * math.sin(yaw) * gains.horizon_dt
            yaw += speed / wheelbase * tan_d * gains.horizon_dt
            d = _point_polyline_dist(x, y, waypoints)
            cost += d * d
        out.append((delta, cost))
    return out


def select_steer(costs: Sequence[tuple[float, float]]) -> float:
    """Argmin over (steering, cost) pairs; ties go to the smaller |steering|."""
    best = None
    for delta, cost in sorted(costs, key=lambda dc: (abs(dc[0]), dc[0])):
        if best is None or cost < best[1]:
            best = (delta, cost)
    return best[0]


def feedforward_steer(waypoints: Sequence[tuple[float, float]], speed: float,
                      wheelbase: float, max_steering: float,
                      gains: ControllerGains) -> float:
    return select_steer(
        candidate_costs(waypoints, speed, wheelbase, max_steering, gains))


def feedback_steer(error: float, t_us: int, gains: ControllerGains,
                   memory: ControllerMemory) -> tuple[float, ControllerMemory]:
    integral = memory.integral
    derivative = 0.0
    if memory.prev_t_us is not None and t_us > memory.prev_t_us:
        dt = (t_us - memory.prev_t_us) / 1e6
        integral = max(-gains.integral_limit,
                       min(gains.integral_limit, integral + error * dt))
        if memory.prev_error is not None:
            derivative = (error - memory.prev_error) / dt
    steer = gains.kp * error + gains.ki * integral + gains.kd * derivative
    return steer, ControllerMemory(integral=integral, prev_error=error, prev_t_us=t_us)


def lookahead_error(waypoints: Sequence[tuple[float, float]],
                    lookahead_m: float) -> float:
    """Lateral path offset at the lookahead range.

    Interpolates linearly between the waypoints straddling the lookahead
    distance; snapping to the single nearest waypoint makes the error saw
    between scanline-quantized points and rings the steering.  Falls back
    to the waypoint nearest the lookahead when the path does not span it.
    """
    ranges = [math.hypot(x, y) for x, y in waypoints]
    pairs = zip(zip(ranges, waypoints), zip(ranges[1:], waypoints[1:]))
    for (r0, (_, y0)), (r1, (_, y1)) in pairs:
        if r0 <= lookahead_m <= r1 and r1 > r0:
            t = (lookahead_m - r0) / (r1 - r0)
            return y0 + t * (y1 - y0)
    best = min(zip(ranges, waypoints), key=lambda rp: abs(rp[0] - lookahead_m))
    return best[1][1]


def arc_lateral(delta: float, wheelbase: float, range_m: float) -> float:
    """Lateral offset, at chord distance ``range_m``, of the constant-steer
    arc the single-track model drives under steering ``delta``."""
    kappa = math.tan(delta) / wheelbase
    if abs(kappa) < 1e-9:
        return 0.0
    half = max(-1.0, min(1.0, range_m * kappa / 2.0))
    theta = 2.0 * math.asin(half)
    return (1.0 - math.cos(theta)) / kappa


def control_step(
    state: StateCapture,
    waypoints: WaypointSet,
    wheelbase: float,
    max_steering: float,
    gains: ControllerGains,
    memory: ControllerMemory,
    t_us: int,
) -> tuple[Optional[SteeringCommand], ControllerMemory]:
    """One control cycle; returns no command when starved of waypoints.

    The PID error is the path's lookahead lateral offset minus the offset
    the feed-forward arc already produces there, so the feedback trims only
    the tracking residual instead of re-steering the curvature the MPC
    accounted for (raw preview error makes the two controllers fight and
    saturates the command into a limit cycle).
    """
    if len(waypoints.points) < 2:
        return None, memory
    path = [(p[0], p[1]) for p in waypoints.points]
    ff = feedforward_steer(path, state.speed, wheelbase, max_steering, gains)
    error = (lookahead_error(path, gains.lookahead_m)
             - arc_lateral(ff, wheelbase, gains.lookahead_m))
    fb, memory = feedback_steer(error, t_us, gains, memory)
    steer = max(-max_steering, min(max_steering, ff + fb))
    return SteeringCommand(steer), memory


class ControllerHandler:
    """Joins the latest waypoint set with each vehicle state update."""

    def __init__(self, wheelbase: float, max_steering: float,
                 gains: ControllerGains = ControllerGains()):
        self.wheelbase = wheelbase
        self.max_steering = max_steering
        self.gains = gains
        self.memory = ControllerMemory()
        self.last_waypoints: Optional[WaypointSet] = None

    def process(self, port, payload, t_us):
        if port == "waypoints":
            self.last_waypoints = payload
            return []
        if self.last_waypoints is None:
            return []
        cmd, self.memory = control_step(
            payload, self.last_waypoints, self.wheelbase, self.max_steering,
            self.gains, self.memory, t_us)
        return [("steering_cmd", cmd)] if cmd is not None else []


def create_config(manifest, vehicle_cfg) -> dict:
    import dataclasses
    return {
        "wheelbase": vehicle_cfg.physical.wheelbase,
        "max_steering_angle": vehicle_cfg.physical.max_steering_angle,
        "gains": dataclasses.asdict(ControllerGains()),
    }


def main():
    from ._runtime import run_module

    def factory(params):
        return ControllerHandler(
            wheelbase=float(params["wheelbase"]),
            max_steering=float(params["max_steering_angle"]),
            gains=ControllerGains(**params.get("gains", {})))

    run_module(factory)


if __name__ == "__main__":
    main()
