"""Lane detection: bright-marking extraction on horizontal scanlines.

Works on the lower image half only.  Each scanline is thresholded against
half the image's peak luminance, consecutive bright pixels are clustered
into runs, and the midpoint between the leftmost and rightmost run
centroids is taken as the lane center.  Centers are smoothed with a
centered moving average across scanlines and returned nearest-first.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..images import rgb_to_array
from ..wire import ImageCapture, LaneCenterSet


@dataclass(frozen=True)
class LaneDetectorParams:
    scanlines: int = 12
    smooth_window: int = 3
    threshold_ratio: float = 0.5


DEFAULT_PARAMS = LaneDetectorParams()


def _bright_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive True values as (first, last) pairs."""
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        return []
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([0], breaks + 1))
    ends = np.concatenate((breaks, [len(idx) - 1]))
    return [(int(idx[a]), int(idx[b])) for a, b in zip(starts, ends)]


def detect_lane_center(img: ImageCapture,
                       params: LaneDetectorParams = DEFAULT_PARAMS) -> LaneCenterSet:
    arr = rgb_to_array(img)
    luma = arr.mean(axis=2)
    h, w = luma.shape
    threshold = params.threshold_ratio * float(luma.max())

    rows = np.unique(np.linspace(h // 2, h - 1, params.scanlines).round().astype(int))
    rows = rows[::-1]  # nearest scanlines (image bottom) first

    raw: list[tuple[float, float]] = []
    for v in rows:
        runs = _bright_runs(luma[v] > threshold)
        if len(runs) < 2:
            continue
        left = (runs[0][0] + runs[0][1]) / 2.0
        right = (runs[-1][0] + runs[-1][1]) / 2.0
        raw.append(((left + right) / 2.0, float(v)))

    if not raw:
        return LaneCenterSet(())

    us = np.array([p[0] for p in raw])
    half = params.smooth_window // 2
    smoothed = [us[max(0, i - half): i + half + 1].mean() for i in range(len(us))]
    return LaneCenterSet(tuple((float(su), v) for su, (_, v) in zip(smoothed, raw)))


class LaneDetectorHandler:
    """Frame handler: RGB captures in, lane-center sets out."""

    def __init__(self, params: LaneDetectorParams = DEFAULT_PARAMS):
        self.params = params

    def process(self, port, payload, t_us):
        return [("lane_centers", detect_lane_center(payload, self.params))]


def create_config(manifest, vehicle_cfg) -> dict:
    return {}  # needs nothing beyond its endpoints


def main():
    from ._runtime import run_module
    run_module(lambda params: LaneDetectorHandler(
        LaneDetectorParams(**params.get("detector", {}))))


if __name__ == "__main__":
    main()
