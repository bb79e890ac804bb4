"""Synthetic thermal scene generator with exact ground truth.

Each room gets a static layout (base temperature, texture, a window-like
gradient, and warm appliance spots); frames add zero to three person blobs
plus sensor noise. Ground-truth boxes cover each blob out to the point where
it crosses halfway between its peak and the background, with a 2 px floor.
Held-out rooms draw fresh layouts (and a small base-temperature shift) so
test conditions are genuinely unseen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..boxes import BoundingBox
from ..imaging import (FRAME_HEIGHT, FRAME_WIDTH, TEMP_MAX_C, TEMP_MIN_C,
                       IRFrame)
from .bundle import DatasetBundle

HALF_MAX_RADIUS = math.sqrt(2.0 * math.log(2.0))  # sigma multiplier at half peak
MIN_GT_BOX = 2.0


@dataclass(frozen=True)
class SceneConfig:
    seed: int = 0
    rooms: int = 7
    heldout_rooms: int = 2
    frames_per_room: int = 100
    heldout_frames_per_room: int | None = None
    background_mean_c: float = 22.0
    background_std_c: float = 0.7
    texture_std_c: float = 0.1
    person_peak_min_c: float = 27.0
    person_peak_max_c: float = 34.0
    person_sigma_min_px: float = 1.0
    person_sigma_max_px: float = 2.5
    person_count_weights: tuple[float, ...] = (0.35, 0.40, 0.20, 0.05)
    # sharp static hotspots, hotter than any person; roughly half the rooms
    appliance_count_min: int = 0
    appliance_count_max: int = 1
    appliance_peak_min_c: float = 36.0
    appliance_peak_max_c: float = 44.0
    appliance_sigma_min_px: float = 0.5
    appliance_sigma_max_px: float = 0.9
    window_gradient_max_c: float = 6.0
    # optional per-frame window amplitude scale in [1-j, 1+j]
    window_amp_jitter: float = 0.0
    sensor_noise_std_c: float = 0.08
    heldout_background_shift_c: float = 0.5
    heldout_window_gradient_min_c: float = 0.0
    heldout_window_gradient_max_c: float = 1.5
    # every second held-out room carries one unseen, lukewarm heat source,
    # sized in degrees above the room base
    heldout_source_amp_min_c: float = 2.5
    heldout_source_amp_max_c: float = 3.3
    heldout_source_sigma_px: float = 1.0

    def __post_init__(self):
        if self.rooms < 1 or self.heldout_rooms < 0 or self.frames_per_room < 1:
            raise ValueError("room and frame counts must be positive")
        if not math.isclose(sum(self.person_count_weights), 1.0, abs_tol=1e-9):
            raise ValueError("person count weights must sum to 1")
        if not (TEMP_MIN_C < self.background_mean_c < self.person_peak_min_c
                <= self.person_peak_max_c < TEMP_MAX_C):
            raise ValueError("temperature parameters out of order or range")

    @property
    def heldout_room_ids(self) -> tuple[str, ...]:
        return tuple(f"t{i:02d}" for i in range(self.heldout_rooms))


_YS, _XS = np.meshgrid(np.arange(FRAME_HEIGHT) + 0.5,
                       np.arange(FRAME_WIDTH) + 0.5, indexing="ij")


def _gaussian(cx, cy, sx, sy, amplitude) -> np.ndarray:
    return amplitude * np.exp(-(((_XS - cx) ** 2) / (2.0 * sx * sx)
                                + ((_YS - cy) ** 2) / (2.0 * sy * sy)))


def _room_layout(cfg: SceneConfig, rng: np.random.Generator, heldout: bool,
                 heldout_index: int = 0):
    """Static room field plus a unit window-gradient field scaled per frame."""
    base = cfg.background_mean_c + rng.normal(0.0, cfg.background_std_c)
    if heldout:
        base += cfg.heldout_background_shift_c
    static = np.full((FRAME_HEIGHT, FRAME_WIDTH), base)
    static += rng.normal(0.0, cfg.texture_std_c, size=static.shape)
    if heldout:
        amp = rng.uniform(cfg.heldout_window_gradient_min_c,
                          cfg.heldout_window_gradient_max_c)
    else:
        amp = rng.uniform(0.0, cfg.window_gradient_max_c)
    sign = 1.0 if rng.integers(2) else -1.0
    if rng.integers(2):
        window = amp * sign * (_XS / FRAME_WIDTH)
    else:
        window = amp * sign * (_YS / FRAME_HEIGHT)
    if heldout:
        # deployment novelty: rooms alternate between one person-like unseen
        # heat source and none at all
        if heldout_index % 2 == 0:
            # sun-warmed object: sits on the warm side of the window gradient
            candidates = [(rng.uniform(3.0, FRAME_WIDTH - 3.0),
                           rng.uniform(3.0, FRAME_HEIGHT - 3.0))
                          for _ in range(8)]
            ax, ay = max(candidates,
                         key=lambda p: window[int(p[1]), int(p[0])])
            amp = rng.uniform(cfg.heldout_source_amp_min_c,
                              cfg.heldout_source_amp_max_c)
            static += _gaussian(ax, ay, cfg.heldout_source_sigma_px,
                                cfg.heldout_source_sigma_px, amp)
    else:
        n_appliances = int(rng.integers(cfg.appliance_count_min,
                                        cfg.appliance_count_max + 1))
        for _ in range(n_appliances):
            ax = rng.uniform(2.0, FRAME_WIDTH - 2.0)
            ay = rng.uniform(2.0, FRAME_HEIGHT - 2.0)
            sigma = rng.uniform(cfg.appliance_sigma_min_px,
                                cfg.appliance_sigma_max_px)
            peak = rng.uniform(cfg.appliance_peak_min_c, cfg.appliance_peak_max_c)
            static += _gaussian(ax, ay, sigma, sigma, max(peak - base, 1.0))
    return base, static, window


def _render_frame(cfg: SceneConfig, rng: np.random.Generator, base: float,
                  static: np.ndarray, window: np.ndarray):
    margin = HALF_MAX_RADIUS * cfg.person_sigma_max_px + 0.1
    n_persons = int(rng.choice(len(cfg.person_count_weights),
                               p=cfg.person_count_weights))
    jitter = rng.uniform(1.0 - cfg.window_amp_jitter,
                         1.0 + cfg.window_amp_jitter)
    field = static + jitter * window
    boxes = []
    for _ in range(n_persons):
        cx = rng.uniform(margin, FRAME_WIDTH - margin)
        cy = rng.uniform(margin, FRAME_HEIGHT - margin)
        sx = rng.uniform(cfg.person_sigma_min_px, cfg.person_sigma_max_px)
        sy = rng.uniform(cfg.person_sigma_min_px, cfg.person_sigma_max_px)
        peak = rng.uniform(cfg.person_peak_min_c, cfg.person_peak_max_c)
        amplitude = max(peak - base, 3.0)
        field += _gaussian(cx, cy, sx, sy, amplitude)
        w = max(2.0 * HALF_MAX_RADIUS * sx, MIN_GT_BOX)
        h = max(2.0 * HALF_MAX_RADIUS * sy, MIN_GT_BOX)
        box = BoundingBox(cx, cy, w, h).clipped(FRAME_WIDTH, FRAME_HEIGHT)
        boxes.append(box)
    field += rng.normal(0.0, cfg.sensor_noise_std_c, size=field.shape)
    np.clip(field, TEMP_MIN_C, TEMP_MAX_C, out=field)
    return field.astype(np.float32), tuple(boxes)


def generate_scene(cfg: SceneConfig) -> DatasetBundle:
    """Deterministic full-view bundle: regular rooms r00.., held-out t00..

    Held-out room ids are in ``cfg.heldout_room_ids``; pass them to
    split_dataset as the test partition to mirror unseen-room deployment.
    """
    frames = []
    specs = [(f"r{i:02d}", i, False, cfg.frames_per_room)
             for i in range(cfg.rooms)]
    heldout_count = cfg.heldout_frames_per_room or cfg.frames_per_room
    specs += [(f"t{i:02d}", cfg.rooms + i, True, heldout_count)
              for i in range(cfg.heldout_rooms)]
    for room_id, room_seq, heldout, n_frames in specs:
        rng = np.random.default_rng([cfg.seed, room_seq])
        base, static, window = _room_layout(cfg, rng, heldout,
                                            heldout_index=room_seq - cfg.rooms)
        for k in range(n_frames):
            field, boxes = _render_frame(cfg, rng, base, static, window)
            frames.append(IRFrame(field, weak_label=int(len(boxes) > 0),
                                  boxes=boxes, source_id=room_id, frame_index=k))
    return DatasetBundle(frames, view="full")
