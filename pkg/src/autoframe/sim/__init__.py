"""Desk-scale driving simulator: track geometry, single-track physics,
analytic sensor rendering and the TCP device endpoints."""

from .physics import VehicleState, step_physics, wrap_angle
from .track import ArcSegment, LineSegment, Track, stadium_track

__all__ = [
    "VehicleState",
    "step_physics",
    "wrap_angle",
    "Track",
    "LineSegment",
    "ArcSegment",
    "stadium_track",
]
