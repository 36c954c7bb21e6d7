"""Planar vector/angle arithmetic and the discrete action-direction encoding.

Everything here is a pure function. The branch convention for angles is
(-pi, pi] and it is used by every other module; callers never subtract raw
angles themselves, they go through :func:`angular_difference`.
"""

from __future__ import annotations

import math
from typing import NamedTuple

TWO_PI = 2.0 * math.pi

N_ACTIONS = 8


class Vec2(NamedTuple):
    """2D point/velocity in meters (world frame)."""

    x: float
    y: float


class DegenerateBearingError(ValueError):
    """Raised when a bearing is requested between coincident points."""


def vec2(x: float, y: float) -> Vec2:
    """Validated Vec2 constructor: components must be finite."""
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValueError(f"non-finite vector components: ({x}, {y})")
    return Vec2(float(x), float(y))


def add(a: Vec2, b: Vec2) -> Vec2:
    return Vec2(a.x + b.x, a.y + b.y)


def sub(a: Vec2, b: Vec2) -> Vec2:
    return Vec2(a.x - b.x, a.y - b.y)


def scale(a: Vec2, s: float) -> Vec2:
    return Vec2(a.x * s, a.y * s)


def norm(a: Vec2) -> float:
    return math.hypot(a.x, a.y)


def distance(a: Vec2, b: Vec2) -> float:
    return math.hypot(b.x - a.x, b.y - a.y)


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the (-pi, pi] branch.

    The result is congruent to ``theta`` mod 2*pi. Non-finite input raises.
    """
    if not math.isfinite(theta):
        raise ValueError(f"non-finite angle: {theta}")
    wrapped = theta % TWO_PI  # in [0, 2*pi)
    if wrapped > math.pi:
        wrapped -= TWO_PI
    return wrapped


# The 8 unit action directions at angles j*pi/4, j = 0..7.
ACTION_ANGLES = tuple(j * math.pi / 4.0 for j in range(N_ACTIONS))
_ACTION_DIRS = tuple(Vec2(math.cos(a), math.sin(a)) for a in ACTION_ANGLES)


def action_direction(j: int) -> Vec2:
    """Unit vector for discrete action ``j`` (angle j*pi/4)."""
    return _ACTION_DIRS[j]


def bearing(origin: Vec2, to: Vec2) -> float:
    """World-frame angle of the vector ``to - origin``, in (-pi, pi].

    Coincident points have no bearing and raise DegenerateBearingError;
    observation building substitutes (distance 0, bearing 0) instead.
    """
    dx = to.x - origin.x
    dy = to.y - origin.y
    if dx == 0.0 and dy == 0.0:
        raise DegenerateBearingError(f"coincident points: {origin}")
    # atan2 returns [-pi, pi]; wrap folds the -pi edge onto +pi.
    return wrap_angle(math.atan2(dy, dx))


def angular_difference(a: float, b: float) -> float:
    """Wrap-aware absolute difference of two angles, in [0, pi]."""
    return abs(wrap_angle(a - b))
