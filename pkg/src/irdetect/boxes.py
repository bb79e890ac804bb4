"""Center-form bounding boxes and scored detections."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned rectangle as (center x, center y, width, height) in pixels.

    Pixel (i, j) spans [i, i+1) x [j, j+1), so a box covering exactly that
    pixel has cx = i + 0.5, cy = j + 0.5 and w = h = 1.
    """

    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        """(x_min, y_min, x_max, y_max)."""
        hw = self.w / 2.0
        hh = self.h / 2.0
        return (self.cx - hw, self.cy - hh, self.cx + hw, self.cy + hh)

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "BoundingBox":
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    @property
    def area(self) -> float:
        return self.w * self.h

    def clipped(self, frame_w: float = 32.0, frame_h: float = 24.0):
        """Clip to [0, frame_w] x [0, frame_h].

        Returns self unchanged (same object) when already inside, a rebuilt
        box when partially outside, or None when nothing remains.
        """
        x0, y0, x1, y1 = self.corners()
        if x0 >= 0.0 and y0 >= 0.0 and x1 <= frame_w and y1 <= frame_h:
            return self
        x0 = max(x0, 0.0)
        y0 = max(y0, 0.0)
        x1 = min(x1, frame_w)
        y1 = min(y1, frame_h)
        if x1 <= x0 or y1 <= y0:
            return None
        return BoundingBox.from_corners(x0, y0, x1, y1)


@dataclass(frozen=True)
class Detection:
    """A bounding box with a confidence score; score-less methods use 1.0."""

    box: BoundingBox
    score: float = 1.0
