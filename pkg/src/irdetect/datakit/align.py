"""Cross-modal annotation transfer: time sync, coordinate fit, interpolation.

RGB video carries box annotations; the IR stream needs them. The shift
between the two clocks is recovered by cross-correlating centroid
trajectories on a 1/target_fps grid, the RGB -> IR pixel mapping by a
per-axis affine least-squares fit over paired boxes, and per-IR-frame boxes
by linear interpolation between the bracketing RGB frames.

Convention: rgb_time = ir_time + shift_seconds.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass

import numpy as np

from ..boxes import BoundingBox
from ..errors import (DegenerateDataError, EmptyDatasetError, NoSyncSignalError)
from ..imaging import FRAME_HEIGHT, FRAME_WIDTH

log = logging.getLogger(__name__)

_MIN_OVERLAP_POINTS = 4
_VARIANCE_FLOOR = 1e-12


@dataclass
class TimeSync:
    shift_seconds: float
    source_fps: float = 24.0
    target_fps: float = 8.0
    resample_fps: float = 2.0

    def __post_init__(self):
        if min(self.source_fps, self.target_fps, self.resample_fps) <= 0:
            raise ValueError("fps values must be positive")
        if not np.isfinite(self.shift_seconds):
            raise ValueError("shift must be finite")


@dataclass
class CoordinateMap:
    """Per-axis affine map from RGB pixels to IR pixels."""

    scale_x: float
    scale_y: float
    offset_x: float
    offset_y: float
    residual_rms: float = 0.0

    def __post_init__(self):
        if self.scale_x <= 0 or self.scale_y <= 0:
            raise DegenerateDataError(
                f"coordinate scales must be positive, got "
                f"({self.scale_x}, {self.scale_y})")

    def apply(self, box: BoundingBox) -> BoundingBox:
        return BoundingBox(box.cx * self.scale_x + self.offset_x,
                           box.cy * self.scale_y + self.offset_y,
                           box.w * self.scale_x,
                           box.h * self.scale_y)


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    va = float(a @ a)
    vb = float(b @ b)
    if va < _VARIANCE_FLOOR or vb < _VARIANCE_FLOOR:
        return None
    return float((a @ b) / np.sqrt(va * vb))


def estimate_time_shift(rgb_events, ir_events, search_window_s: float = 5.0,
                        source_fps: float = 24.0, target_fps: float = 8.0,
                        resample_fps: float = 2.0) -> TimeSync:
    """Shift maximizing centroid cross-correlation over a 1/target_fps grid.

    Events are (time, cx, cy) rows. Raises NoSyncSignalError when the
    trajectories never overlap or carry no variance anywhere on the grid.
    """
    rgb = np.asarray(rgb_events, dtype=np.float64)
    ir = np.asarray(ir_events, dtype=np.float64)
    if rgb.ndim != 2 or rgb.shape[1] != 3 or ir.ndim != 2 or ir.shape[1] != 3:
        raise ValueError("event series must be rows of (time, cx, cy)")
    if len(rgb) < 2 or len(ir) < 2:
        raise NoSyncSignalError("need at least two events per series")
    rgb = rgb[np.argsort(rgb[:, 0], kind="stable")]
    ir = ir[np.argsort(ir[:, 0], kind="stable")]
    grid = 1.0 / target_fps
    steps = int(round(search_window_s / grid))
    best_shift = None
    best_score = None
    for step in range(-steps, steps + 1):
        shift = step * grid
        t = ir[:, 0] + shift
        inside = (t >= rgb[0, 0]) & (t <= rgb[-1, 0])
        if inside.sum() < _MIN_OVERLAP_POINTS:
            continue
        scores = []
        for axis in (1, 2):
            sampled = np.interp(t[inside], rgb[:, 0], rgb[:, axis])
            r = _pearson(sampled, ir[inside, axis])
            if r is not None:
                scores.append(r)
        if not scores:
            continue
        score = float(np.mean(scores))
        if best_score is None or score > best_score:
            best_score = score
            best_shift = shift
    if best_shift is None:
        raise NoSyncSignalError("no overlapping, non-constant trajectory "
                                "found in the search window")
    return TimeSync(best_shift, source_fps, target_fps, resample_fps)


def fit_coordinate_map(paired_boxes) -> CoordinateMap:
    """Least-squares affine fit over (rgb_box, ir_box) pairs.

    Centers and extents are fit jointly per axis: centers constrain scale
    and offset, widths/heights constrain scale alone.
    """
    pairs = list(paired_boxes)
    if len(pairs) < 2:
        raise DegenerateDataError("need at least two box pairs")
    params = []
    residuals = []
    for axis in ("x", "y"):
        if axis == "x":
            centers = [(r.cx, i.cx) for r, i in pairs]
            extents = [(r.w, i.w) for r, i in pairs]
        else:
            centers = [(r.cy, i.cy) for r, i in pairs]
            extents = [(r.h, i.h) for r, i in pairs]
        if len({round(c, 9) for c, _ in centers}) < 2:
            raise DegenerateDataError(f"all {axis} centers coincide; "
                                      "scale/offset are not identifiable")
        design = np.array([[c, 1.0] for c, _ in centers]
                          + [[e, 0.0] for e, _ in extents])
        target = np.array([v for _, v in centers] + [v for _, v in extents])
        solution, _, _, _ = np.linalg.lstsq(design, target, rcond=None)
        params.append((float(solution[0]), float(solution[1])))
        residuals.append(design @ solution - target)
    rms = float(np.sqrt(np.mean(np.concatenate(residuals) ** 2)))
    (sx, ox), (sy, oy) = params
    return CoordinateMap(sx, sy, ox, oy, rms)


def _pair_by_center(left, right):
    """Greedy nearest-center association between two box lists."""
    pairs = []
    used = set()
    candidates = sorted(
        ((li.cx - ri.cx) ** 2 + (li.cy - ri.cy) ** 2, l, r)
        for l, li in enumerate(left) for r, ri in enumerate(right))
    matched_left = set()
    for _, l, r in candidates:
        if l in matched_left or r in used:
            continue
        matched_left.add(l)
        used.add(r)
        pairs.append((l, r))
    return pairs, matched_left, used


def _interpolate(b0: BoundingBox, b1: BoundingBox, alpha: float) -> BoundingBox:
    return BoundingBox(b0.cx + alpha * (b1.cx - b0.cx),
                       b0.cy + alpha * (b1.cy - b0.cy),
                       b0.w + alpha * (b1.w - b0.w),
                       b0.h + alpha * (b1.h - b0.h))


def transfer_annotations(rgb_annotations, coordinate_map: CoordinateMap,
                         sync: TimeSync, ir_timestamps
                         ) -> dict[int, list[BoundingBox]]:
    """Boxes per IR frame index; frames outside RGB coverage are omitted.

    ``rgb_annotations`` is a sequence of (time, boxes). For each covered IR
    timestamp, boxes of the bracketing RGB frames are paired by nearest
    center and linearly interpolated; boxes present on only one side carry
    over from the temporally nearer frame. An exact timestamp hit bypasses
    interpolation so an identity map with zero shift is the identity.
    """
    annotations = sorted(((float(t), list(boxes)) for t, boxes in rgb_annotations),
                         key=lambda item: item[0])
    if not annotations:
        raise EmptyDatasetError("no RGB annotations to transfer")
    times = [t for t, _ in annotations]
    out: dict[int, list[BoundingBox]] = {}
    for index, ir_t in enumerate(ir_timestamps):
        t = ir_t + sync.shift_seconds
        if t < times[0] or t > times[-1]:
            log.debug("IR frame %d at %.3fs outside RGB coverage", index, ir_t)
            continue
        pos = bisect.bisect_left(times, t)
        if pos < len(times) and times[pos] == t:
            raw = annotations[pos][1]
        else:
            left_t, left = annotations[pos - 1]
            right_t, right = annotations[pos]
            alpha = (t - left_t) / (right_t - left_t)
            pairs, used_left, used_right = _pair_by_center(left, right)
            raw = [_interpolate(left[l], right[r], alpha) for l, r in pairs]
            extras_from_left = alpha <= 0.5
            if extras_from_left:
                raw += [b for i, b in enumerate(left) if i not in used_left]
            else:
                raw += [b for i, b in enumerate(right) if i not in used_right]
        mapped = []
        for box in raw:
            clipped = coordinate_map.apply(box).clipped(FRAME_WIDTH, FRAME_HEIGHT)
            if clipped is not None:
                mapped.append(clipped)
        out[index] = mapped
    return out
