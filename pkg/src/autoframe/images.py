"""numpy adapters and primitive drawing for wire image payloads."""

from __future__ import annotations

import numpy as np

from .wire import ImageCapture, PixelFormat


def rgb_to_array(img: ImageCapture) -> np.ndarray:
    if img.pixel_format != PixelFormat.RGB8:
        raise ValueError(f"expected RGB8, got {img.pixel_format.name}")
    return np.frombuffer(img.pixels, dtype=np.uint8).reshape(img.height, img.width, 3)


def depth_to_array(img: ImageCapture) -> np.ndarray:
    if img.pixel_format != PixelFormat.DEPTH_F32:
        raise ValueError(f"expected DEPTH_F32, got {img.pixel_format.name}")
    return np.frombuffer(img.pixels, dtype="<f4").reshape(img.height, img.width)


def array_to_rgb(arr: np.ndarray) -> ImageCapture:
    h, w, c = arr.shape
    if c != 3:
        raise ValueError("expected an (H, W, 3) array")
    return ImageCapture.rgb8(w, h, np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def line_pixels(u0: int, v0: int, u1: int, v1: int) -> list[tuple[int, int]]:
    """Bresenham line, endpoints included."""
    pixels = []
    du, dv = abs(u1 - u0), -abs(v1 - v0)
    su = 1 if u0 < u1 else -1
    sv = 1 if v0 < v1 else -1
    err = du + dv
    u, v = u0, v0
    while True:
        pixels.append((u, v))
        if u == u1 and v == v1:
            return pixels
        e2 = 2 * err
        if e2 >= dv:
            err += dv
            u += su
        if e2 <= du:
            err += du
            v += sv


def draw_line(arr: np.ndarray, p0: tuple[int, int], p1: tuple[int, int],
              color: tuple[int, int, int]) -> None:
    """Draw a clipped 1-px line into an (H, W, 3) array in place."""
    h, w = arr.shape[:2]
    for u, v in line_pixels(p0[0], p0[1], p1[0], p1[1]):
        if 0 <= u < w and 0 <= v < h:
            arr[v, u] = color
