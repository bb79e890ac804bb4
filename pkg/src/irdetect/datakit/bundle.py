"""Dataset bundles and supervision views.

One pool of frames backs three views: ``full`` exposes boxes and labels,
``weak`` only the image-level label, ``unlabeled`` nothing. Views share the
underlying temperature arrays, so frame data is identical across them.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from ..errors import EmptyDatasetError
from ..imaging import IRFrame

VIEWS = ("full", "weak", "unlabeled")


@dataclass
class DatasetBundle:
    frames: list[IRFrame] = field(default_factory=list)
    view: str = "full"
    split: str | None = None

    def __post_init__(self):
        if self.view not in VIEWS:
            raise ValueError(f"unknown view {self.view!r}")

    def __len__(self):
        return len(self.frames)

    def room_ids(self) -> list[str]:
        seen = []
        for f in self.frames:
            if f.source_id not in seen:
                seen.append(f.source_id)
        return seen

    def as_view(self, view: str) -> "DatasetBundle":
        """Same frames with annotations restricted to the requested view."""
        if view not in VIEWS:
            raise ValueError(f"unknown view {view!r}")
        if view == "full":
            frames = list(self.frames)
        elif view == "weak":
            frames = [dataclasses.replace(f, boxes=None) for f in self.frames]
        else:
            frames = [dataclasses.replace(f, boxes=None, weak_label=None)
                      for f in self.frames]
        return DatasetBundle(frames, view=view, split=self.split)

    def empty_room_frames(self) -> list[IRFrame]:
        """Weak-view frames with label 0 (the anomaly path's training pool)."""
        return [f for f in self.as_view("weak").frames if f.weak_label == 0]


def split_dataset(bundle: DatasetBundle, ratios, seed: int,
                  test_room_ids=None) -> tuple[DatasetBundle, ...]:
    """Room-wise test split, then frame-wise train/val split.

    ``ratios`` is (train, val) or (train, val, test) summing to 1. The test
    fraction selects whole rooms (rounded to the nearest room); explicit
    ``test_room_ids`` override the random room choice. Train/val splits
    frames of the remaining rooms. Deterministic given seed.
    """
    import numpy as np

    ratios = tuple(float(r) for r in ratios)
    if len(ratios) not in (2, 3) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be (train, val[, test]) summing to 1")
    rng = np.random.default_rng(seed)
    rooms = bundle.room_ids()
    if len(ratios) == 3 or test_room_ids is not None:
        if test_room_ids is None:
            n_test = round(len(rooms) * ratios[2])
            if n_test < 1 or n_test >= len(rooms):
                raise EmptyDatasetError(
                    f"cannot hold out {n_test} of {len(rooms)} rooms")
            order = rng.permutation(len(rooms))
            test_room_ids = [rooms[i] for i in sorted(order[:n_test])]
        test_room_ids = set(test_room_ids)
        missing = test_room_ids - set(rooms)
        if missing:
            raise ValueError(f"unknown test rooms {sorted(missing)}")
    else:
        test_room_ids = set()
    test_frames = [f for f in bundle.frames if f.source_id in test_room_ids]
    pool = [f for f in bundle.frames if f.source_id not in test_room_ids]
    if not pool:
        raise EmptyDatasetError("no frames left outside the test rooms")
    train_share = ratios[0] / (ratios[0] + ratios[1])
    n_train = round(len(pool) * train_share)
    order = rng.permutation(len(pool))
    train_idx = sorted(order[:n_train])
    val_idx = sorted(order[n_train:])
    make = lambda frames, split: DatasetBundle(frames, view=bundle.view, split=split)
    out = (make([pool[i] for i in train_idx], "train"),
           make([pool[i] for i in val_idx], "val"))
    if test_room_ids:
        out += (make(test_frames, "test"),)
    return out


def resample_fps(frames, from_fps: float, to_fps: float) -> list:
    """Keep frames at indices round(k * from_fps / to_fps), preserving order."""
    if from_fps <= 0 or to_fps <= 0:
        raise ValueError("fps values must be positive")
    if to_fps > from_fps:
        raise ValueError("cannot resample upward")
    frames = list(frames)
    ratio = from_fps / to_fps
    out = []
    k = 0
    while True:
        index = int(k * ratio + 0.5)
        if index >= len(frames):
            break
        out.append(frames[index])
        k += 1
    return out
