"""Scenario definitions: a track, a vehicle configuration, an initial pose
and lifecycle hooks called around the simulation loop."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable

from ..config import (
    ConnectionDetails,
    Pose,
    SensorKind,
    SensorSpec,
    VehicleConfig,
    fixture_config,
)
from .track import Track, stadium_track

Hook = Callable[..., None]


def _noop(*args, **kwargs):
    return None


@dataclass
class Scenario:
    name: str
    track: Track
    config: VehicleConfig
    initial_s: float = 5.0
    initial_lateral: float = 0.0
    speed: float = 8.0
    on_setup: Hook = _noop
    on_step: Hook = _noop      # called once per simulation step
    on_teardown: Hook = _noop


def stadium_scenario(host: str = "127.0.0.1", device_port_base: int = 46000,
                     speed: float = 8.0) -> Scenario:
    return Scenario(
        name="stadium",
        track=stadium_track(),
        config=fixture_config(host, device_port_base),
        speed=speed,
    )


def stadium_twin_scenario(host: str = "127.0.0.1",
                          device_port_base: int = 46000) -> Scenario:
    """The stadium vehicle with an extra rear-facing RGB camera; used to
    exercise configuration pushes (the HAL set differs from the fixture)."""
    base = fixture_config(host, device_port_base)
    import math
    rear = SensorSpec(
        "rgb_rear", SensorKind.RGB_CAMERA,
        Pose((-0.5, 0.0, 1.4), (math.pi, 0.0, 0.0)),
        {"width": 320, "height": 240, "fov_deg": 90.0, "rate_hz": 20.0},
        ConnectionDetails("rear-rgb-cam", "SimWorks", "tcp", host,
                          device_port_base + 5))
    cfg = dataclasses.replace(base, sensors=base.sensors + (rear,))
    return Scenario(name="stadium_twin", track=stadium_track(), config=cfg)


SCENARIOS: dict[str, Callable[..., Scenario]] = {
    "stadium": stadium_scenario,
    "stadium_twin": stadium_twin_scenario,
}


def make_scenario(name: str, host: str = "127.0.0.1",
                  device_port_base: int = 46000) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; "
                         f"available: {', '.join(sorted(SCENARIOS))}") from None
    return factory(host=host, device_port_base=device_port_base)
