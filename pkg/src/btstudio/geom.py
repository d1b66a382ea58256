"""Planar-yaw pose arithmetic shared by the simulator and the scorer."""

from __future__ import annotations

import math

TWO_PI = 2.0 * math.pi


def norm_angle(a: float) -> float:
    """Normalize to (-pi, pi]."""
    a = math.fmod(a, TWO_PI)
    if a <= -math.pi:
        a += TWO_PI
    elif a > math.pi:
        a -= TWO_PI
    return a


def angle_dist(a: float, b: float) -> float:
    """Absolute angular separation in [0, pi]."""
    return abs(norm_angle(a - b))


def rotate_xy(x: float, y: float, yaw: float) -> tuple[float, float]:
    c, s = math.cos(yaw), math.sin(yaw)
    return (c * x - s * y, s * x + c * y)


def offset_point(position: tuple[float, ...], yaw: float,
                 offset: tuple[float, ...]) -> tuple[float, ...]:
    """Apply an offset expressed in the reference object's yaw-rotated
    frame. 2-vectors stay planar; 3-vectors add their z component.
    """
    ox, oy = offset[0], offset[1]
    rx, ry = rotate_xy(ox, oy, yaw)
    if len(offset) >= 3:
        return (position[0] + rx, position[1] + ry, position[2] + offset[2])
    return (position[0] + rx, position[1] + ry)


def dist3(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2 + (a[2] - b[2]) ** 2)


def dist2(a: tuple[float, ...], b: tuple[float, ...]) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
