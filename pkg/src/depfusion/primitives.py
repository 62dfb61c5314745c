"""Plain geometric records shared by detection and alignment.

Coordinates live on the continuous image plane: origin at the top-left
corner, x to the right, y down.  Pixel (row r, col c) covers the unit square
[c, c+1] x [r, r+1], so its center sits at (c + 0.5, r + 0.5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

LANDMARK_NAMES = ("left_eye", "right_eye", "nose", "mouth_left", "mouth_right")


class Point(NamedTuple):
    x: float
    y: float

    def is_finite(self) -> bool:
        return math.isfinite(self.x) and math.isfinite(self.y)


class BoundingBox(NamedTuple):
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return Point((self.x_min + self.x_max) / 2, (self.y_min + self.y_max) / 2)

    def is_valid(self) -> bool:
        return (all(math.isfinite(v) for v in self)
                and self.x_min < self.x_max and self.y_min < self.y_max)

    def expanded(self, fraction: float) -> "BoundingBox":
        dx, dy = self.width * fraction, self.height * fraction
        return BoundingBox(self.x_min - dx, self.y_min - dy, self.x_max + dx, self.y_max + dy)

    def contains(self, p: Point) -> bool:
        return self.x_min <= p.x <= self.x_max and self.y_min <= p.y <= self.y_max

    @classmethod
    def around(cls, points) -> "BoundingBox":
        pts = np.asarray(points, dtype=np.float64)
        return cls(float(pts[:, 0].min()), float(pts[:, 1].min()),
                   float(pts[:, 0].max()), float(pts[:, 1].max()))


@dataclass(frozen=True)
class LandmarkSet:
    left_eye: Point
    right_eye: Point
    nose: Point
    mouth_left: Point
    mouth_right: Point

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in LANDMARK_NAMES], dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "LandmarkSet":
        arr = np.asarray(arr, dtype=np.float64).reshape(5, 2)
        return cls(*(Point(float(x), float(y)) for x, y in arr))

    def map(self, fn: Callable[[Point], Point]) -> "LandmarkSet":
        return LandmarkSet(*(fn(getattr(self, n)) for n in LANDMARK_NAMES))

    def is_finite(self) -> bool:
        return all(getattr(self, n).is_finite() for n in LANDMARK_NAMES)

    @property
    def eye_midpoint(self) -> Point:
        return Point((self.left_eye.x + self.right_eye.x) / 2,
                     (self.left_eye.y + self.right_eye.y) / 2)


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    landmarks: LandmarkSet
    confidence: float

    def is_valid(self) -> bool:
        """Check the box, the [0, 1] confidence and the landmark containment rule."""
        if not self.box.is_valid() or not self.landmarks.is_finite():
            return False
        if not 0.0 <= self.confidence <= 1.0:
            return False
        grown = self.box.expanded(0.10)
        return all(grown.contains(getattr(self.landmarks, n)) for n in LANDMARK_NAMES)
