"""Detection evaluation: IoU matching, LRP/oLRP, and latency measurement.

oLRP is the minimum over score thresholds of the localization-recall-
precision error, scaled to [0, 100] (lower is better). The localization
term charges each true positive (1 - IoU) / (1 - iou_threshold); false
positives and false negatives each contribute a full unit.
"""

from __future__ import annotations

import statistics
import time
from collections.abc import Mapping
from dataclasses import dataclass, field

from .boxes import BoundingBox, Detection


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; symmetric, in [0, 1]."""
    if a == b:
        return 1.0
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    if iw <= 0.0:
        return 0.0
    ih = min(ay1, by1) - max(ay0, by0)
    if ih <= 0.0:
        return 0.0
    inter = iw * ih
    # corner reconstruction can overshoot the union by an ulp for equal boxes
    return min(1.0, inter / (a.area + b.area - inter))


@dataclass
class MatchResult:
    """Greedy score-descending assignment of detections to ground truth."""

    tp: list[tuple[int, int, float]]  # (detection index, gt index, IoU)
    fp: list[int]                     # unmatched detection indices
    fn: list[int]                     # unmatched gt indices


def match_detections(detections, gt_boxes, iou_threshold: float = 0.5) -> MatchResult:
    """Each detection (highest score first) takes the best unmatched GT.

    A pair counts only at IoU >= iou_threshold; ties on IoU go to the
    earlier GT index, ties on score to the earlier detection index.
    """
    dets = list(detections)
    gts = list(gt_boxes)
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = [False] * len(gts)
    tp = []
    fp = []
    for i in order:
        best_iou = 0.0
        best_g = -1
        for g, gt in enumerate(gts):
            if taken[g]:
                continue
            value = iou(dets[i].box, gt)
            if value > best_iou:
                best_iou = value
                best_g = g
        if best_g >= 0 and best_iou >= iou_threshold:
            taken[best_g] = True
            tp.append((i, best_g, best_iou))
        else:
            fp.append(i)
    fn = [g for g, used in enumerate(taken) if not used]
    return MatchResult(tp=tp, fp=fp, fn=fn)


@dataclass
class LrpResult:
    """LRP error and its components, all scaled to [0, 100]."""

    olrp: float
    olrp_loc: float
    olrp_fp: float
    olrp_fn: float
    score_threshold: float
    tp: int
    fp: int
    fn: int


def lrp(tp_ious, num_fp: int, num_fn: int, iou_threshold: float = 0.5) -> LrpResult:
    """LRP at one fixed detection set (one score threshold).

    With zero true positives the localization component is reported as 100
    (maximally bad) to keep reports total; an undefined precision or recall
    denominator reports that component as 0 (no detections emitted / no GT).
    """
    ious = list(tp_ious)
    ntp = len(ious)
    total = ntp + num_fp + num_fn
    if total == 0:
        raise ValueError("LRP undefined with no TP, FP, or FN")
    loc_sum = sum((1.0 - v) / (1.0 - iou_threshold) for v in ious)
    value = 100.0 * (loc_sum + num_fp + num_fn) / total
    loc = 100.0 * loc_sum / ntp if ntp else 100.0
    fp_comp = 100.0 * num_fp / (ntp + num_fp) if ntp + num_fp else 0.0
    fn_comp = 100.0 * num_fn / (ntp + num_fn) if ntp + num_fn else 0.0
    return LrpResult(value, loc, fp_comp, fn_comp, float("nan"), ntp, num_fp, num_fn)


# Sentinel "threshold" above every valid score: the empty detection set.
EMPTY_SET_THRESHOLD = 1.0 + 1e-9


def olrp(frame_pairs, iou_threshold: float = 0.5) -> LrpResult:
    """Dataset-level optimal LRP over (detections, gt_boxes) frame pairs.

    Matches are pooled over all frames, then LRP is minimized over the sweep
    of unique detection scores plus the empty-set sentinel. Greedy matching
    in descending score order makes each sweep point a prefix of one global
    matching pass. Ties prefer the higher threshold.
    """
    records = []  # (score, iou or None)
    total_gt = 0
    for dets, gts in frame_pairs:
        dets = list(dets)
        total_gt += len(gts)
        matched = {i: v for i, _, v in
                   match_detections(dets, gts, iou_threshold).tp}
        for i, det in enumerate(dets):
            records.append((det.score, matched.get(i)))
    if not records and total_gt == 0:
        raise ValueError("nothing to evaluate: no detections and no ground truth")
    records.sort(key=lambda r: -r[0])

    best: LrpResult | None = None
    if total_gt > 0:
        best = lrp([], 0, total_gt, iou_threshold)
        best.score_threshold = EMPTY_SET_THRESHOLD
    tp_ious: list[float] = []
    n_fp = 0
    i = 0
    while i < len(records):
        score = records[i][0]
        while i < len(records) and records[i][0] == score:
            matched_iou = records[i][1]
            if matched_iou is None:
                n_fp += 1
            else:
                tp_ious.append(matched_iou)
            i += 1
        candidate = lrp(tp_ious, n_fp, total_gt - len(tp_ious), iou_threshold)
        candidate.score_threshold = score
        if best is None or candidate.olrp < best.olrp:
            best = candidate
    return best


@dataclass
class LatencyStats:
    median_ms: float
    mean_ms: float


@dataclass
class BenchmarkReport:
    """Per-method latency over one shared frame set."""

    entries: dict[str, LatencyStats] = field(default_factory=dict)
    frame_count: int = 0
    hardware_note: str = ""


def benchmark_latency(method, frames, warmup: int = 10, repeats: int = 3,
                      hardware_note: str = "") -> BenchmarkReport:
    """Wall-clock per-frame latency: best of ``repeats``, median over frames.

    ``method`` is a frame -> detections closure or a name -> closure mapping;
    model loading and I/O belong outside the closure. Single-threaded by
    contract for comparability.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("need at least one frame to benchmark")
    methods = dict(method) if isinstance(method, Mapping) else \
        {getattr(method, "__name__", "method"): method}
    report = BenchmarkReport(frame_count=len(frames), hardware_note=hardware_note)
    repeats = max(1, repeats)
    for name, fn in methods.items():
        for f in frames[:warmup]:
            fn(f)
        per_frame = []
        for f in frames:
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn(f)
                best = min(best, time.perf_counter() - t0)
            per_frame.append(best * 1000.0)
        report.entries[name] = LatencyStats(
            median_ms=statistics.median(per_frame),
            mean_ms=statistics.fmean(per_frame))
    return report
