"""Thermal frame representation and threshold-based segmentation.

The direct detection path is: binarize the field at a threshold, label the
8-connected blobs, and wrap each surviving blob in its min/max-pixel
bounding box. The same path runs on raw temperatures (threshold baseline)
and on reconstruction residuals (anomaly path).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .boxes import BoundingBox, Detection
from .errors import EmptyDatasetError, NoContrastError

log = logging.getLogger(__name__)

FRAME_WIDTH = 32
FRAME_HEIGHT = 24
TEMP_MIN_C = -20.0
TEMP_MAX_C = 80.0
NORMALIZATION_C = 50.0
OTSU_BINS = 256


@dataclass
class IRFrame:
    """One 32x24 grid of temperatures in Celsius with optional annotations.

    ``weak_label`` is the image-level person-presence bit; ``boxes`` are
    person bounding boxes. Either may be None when the dataset view hides it.
    """

    temperatures: np.ndarray
    weak_label: int | None = None
    boxes: tuple[BoundingBox, ...] | None = None
    source_id: str = ""
    frame_index: int = 0

    def __post_init__(self):
        t = np.asarray(self.temperatures, dtype=np.float32)
        if t.shape != (FRAME_HEIGHT, FRAME_WIDTH):
            raise ValueError(f"frame must be {FRAME_HEIGHT}x{FRAME_WIDTH}, got {t.shape}")
        if not np.isfinite(t).all():
            ys, xs = np.nonzero(~np.isfinite(t))
            raise ValueError(f"non-finite temperature at pixel (x={xs[0]}, y={ys[0]})")
        if t.min() < TEMP_MIN_C or t.max() > TEMP_MAX_C:
            raise ValueError(f"temperatures outside [{TEMP_MIN_C}, {TEMP_MAX_C}] C: "
                             f"range [{t.min():.2f}, {t.max():.2f}]")
        self.temperatures = t
        if self.boxes is not None:
            self.boxes = tuple(self.boxes)
            for b in self.boxes:
                x0, y0, x1, y1 = b.corners()
                if b.w <= 0 or b.h <= 0 or x0 < 0 or y0 < 0 or \
                        x1 > FRAME_WIDTH or y1 > FRAME_HEIGHT:
                    raise ValueError(f"box {b} outside frame bounds")
        if self.weak_label is not None:
            if self.weak_label not in (0, 1):
                raise ValueError(f"weak label must be 0 or 1, got {self.weak_label}")
            if self.boxes is not None and (self.weak_label == 1) != (len(self.boxes) > 0):
                raise ValueError("weak label inconsistent with boxes")


@dataclass
class ThresholdConfig:
    """Manual threshold in Celsius, or Otsu when ``tau`` is None."""

    tau: float | None = None
    min_blob_area: int = 2

    def __post_init__(self):
        if self.tau is not None and not (TEMP_MIN_C <= self.tau <= TEMP_MAX_C):
            raise ValueError(f"manual tau {self.tau} outside plausible range")
        if self.min_blob_area < 1:
            raise ValueError("min_blob_area must be >= 1")


def normalize(frame: IRFrame) -> np.ndarray:
    """Frame as a [1, 24, 32] float32 tensor of Celsius / 50."""
    t = frame.temperatures
    if not np.isfinite(t).all():
        ys, xs = np.nonzero(~np.isfinite(t))
        raise ValueError(f"non-finite temperature at pixel (x={xs[0]}, y={ys[0]})")
    return (t / np.float32(NORMALIZATION_C))[None, :, :]


def binarize(field: np.ndarray, tau: float) -> np.ndarray:
    """Boolean mask: pixel set iff value >= tau."""
    return np.asarray(field) >= tau


def otsu_threshold(field: np.ndarray) -> float:
    """Threshold maximizing inter-class variance over a 256-bin histogram.

    The histogram spans [min, max] of the field; the returned threshold is
    the upper edge of the selected background bin. Class moments use integer
    bin indices (affine-equivalent to bin centers) so the argmax, including
    tie plateaus from empty bins, is exact; ties resolve to the lowest bin.
    """
    values = np.asarray(field, dtype=np.float64).ravel()
    lo = values.min()
    hi = values.max()
    if hi <= lo:
        raise NoContrastError("field is constant; no threshold separates it")
    counts, edges = np.histogram(values, bins=OTSU_BINS, range=(lo, hi))
    counts = counts.astype(np.int64)
    indices = np.arange(OTSU_BINS, dtype=np.int64)
    total = int(counts.sum())
    total_mass = int((counts * indices).sum())
    w0 = np.cumsum(counts)[:-1]
    mass0 = np.cumsum(counts * indices)[:-1]
    valid = (w0 > 0) & (w0 < total)
    mu0 = np.divide(mass0, w0, out=np.zeros(w0.size), where=valid)
    mu1 = np.divide(total_mass - mass0, total - w0,
                    out=np.zeros(w0.size), where=valid)
    sigma_b = np.full(OTSU_BINS - 1, -1.0)
    sigma_b[valid] = (w0 * (total - w0) * (mu0 - mu1) ** 2)[valid]
    split = int(np.argmax(sigma_b))
    return float(edges[split + 1])


def connected_components(mask: np.ndarray) -> np.ndarray:
    """8-connectivity labeling; labels 1..K ordered by row-major first pixel.

    Background is 0. Two-pass union-find over the boolean mask.
    """
    m = np.asarray(mask, dtype=bool)
    h, w = m.shape
    raw = np.zeros((h, w), dtype=np.int32)
    parent = [0]

    def find(a: int) -> int:
        root = a
        while parent[root] != root:
            root = parent[root]
        while parent[a] != root:
            parent[a], a = root, parent[a]
        return root

    nxt = 1
    for r in range(h):
        row = m[r]
        for c in range(w):
            if not row[c]:
                continue
            neighbors = []
            if c > 0 and raw[r, c - 1]:
                neighbors.append(raw[r, c - 1])
            if r > 0:
                for cc in range(max(0, c - 1), min(w, c + 2)):
                    if raw[r - 1, cc]:
                        neighbors.append(raw[r - 1, cc])
            if not neighbors:
                parent.append(nxt)
                raw[r, c] = nxt
                nxt += 1
            else:
                lead = find(neighbors[0])
                for other in neighbors[1:]:
                    root = find(other)
                    if root != lead:
                        parent[root] = lead
                raw[r, c] = lead
    labels = np.zeros_like(raw)
    remap: dict[int, int] = {}
    for r in range(h):
        for c in range(w):
            if raw[r, c]:
                root = find(raw[r, c])
                if root not in remap:
                    remap[root] = len(remap) + 1
                labels[r, c] = remap[root]
    return labels


def blobs_to_boxes(labels: np.ndarray, min_blob_area: int = 2) -> list[BoundingBox]:
    """Min/max-pixel box per labeled blob; blobs below the area floor drop.

    Pixel-corner convention: a blob spanning pixel columns [x0, x1] maps to
    corners (x0, y0)-(x1+1, y1+1), so a single pixel yields a 1x1 box.
    """
    labels = np.asarray(labels)
    boxes = []
    for k in range(1, int(labels.max(initial=0)) + 1):
        ys, xs = np.nonzero(labels == k)
        if ys.size < min_blob_area:
            continue
        x0, x1 = int(xs.min()), int(xs.max()) + 1
        y0, y1 = int(ys.min()), int(ys.max()) + 1
        boxes.append(BoundingBox.from_corners(float(x0), float(y0), float(x1), float(y1)))
    return boxes


def detect_threshold(frame: IRFrame, config: ThresholdConfig) -> list[Detection]:
    """Direct detection: binarize -> connected components -> boxes.

    Otsu mode treats a constant frame as empty. All scores are 1.0.
    """
    return detect_on_field(frame.temperatures, config.tau, config.min_blob_area)


def detect_on_field(field: np.ndarray, tau: float | None,
                    min_blob_area: int = 2) -> list[Detection]:
    """Threshold pipeline over an arbitrary real-valued grid.

    ``tau`` None selects Otsu's threshold; a constant field then yields no
    detections. Unlike ThresholdConfig, tau is unconstrained here because
    residual fields are not Celsius readings.
    """
    if tau is None:
        try:
            tau = otsu_threshold(field)
        except NoContrastError:
            log.debug("constant field in Otsu mode; emitting no detections")
            return []
    labels = connected_components(binarize(field, tau))
    return [Detection(box, 1.0) for box in blobs_to_boxes(labels, min_blob_area)]


def calibrate_tau(validation_frames, grid, min_blob_area: int = 2) -> float:
    """Pick the grid threshold minimizing oLRP on labeled validation frames.

    Ties resolve to the smaller threshold.
    """
    from .evalkit import olrp

    frames = list(validation_frames)
    if not frames:
        raise EmptyDatasetError("validation set is empty")
    if all(f.boxes is None for f in frames):
        raise EmptyDatasetError("validation frames carry no box annotations")
    best_tau = None
    best = None
    for tau in sorted(grid):
        pairs = [(detect_on_field(f.temperatures, float(tau), min_blob_area),
                  list(f.boxes or ())) for f in frames]
        score = olrp(pairs).olrp
        if best is None or score < best:
            best = score
            best_tau = float(tau)
    return best_tau
