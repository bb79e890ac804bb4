"""Dataset persistence.

Directory layout: <root>/<room_id>/frames.irfr + annotations.jsonl +
meta.json. The IRFR container is: magic "IRFR", u32 version=1, u16 width,
u16 height, u32 frame count, then float32 little-endian Celsius values per
frame. The annotation sidecar holds one JSON object per line:
{"frame": int, "boxes": [[cx, cy, w, h], ...]}; the weak label derives from
boxes being non-empty.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..boxes import BoundingBox
from ..errors import FormatError
from ..imaging import FRAME_HEIGHT, FRAME_WIDTH, IRFrame
from .bundle import DatasetBundle

IRFR_MAGIC = b"IRFR"
IRFR_VERSION = 1


def save_frames_irfr(path, temperature_stack: np.ndarray):
    arr = np.ascontiguousarray(temperature_stack, dtype="<f4")
    if arr.ndim != 3 or arr.shape[1:] != (FRAME_HEIGHT, FRAME_WIDTH):
        raise ValueError(f"expected [N, {FRAME_HEIGHT}, {FRAME_WIDTH}] stack, "
                         f"got {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(IRFR_MAGIC)
        fh.write(struct.pack("<IHHI", IRFR_VERSION, FRAME_WIDTH, FRAME_HEIGHT,
                             arr.shape[0]))
        fh.write(arr.tobytes())


def load_frames_irfr(path) -> np.ndarray:
    with open(path, "rb") as fh:
        head = fh.read(4)
        if head != IRFR_MAGIC:
            raise FormatError(f"{path}: not an IRFR file (bad magic)")
        raw = fh.read(12)
        if len(raw) != 12:
            raise FormatError(f"{path}: truncated IRFR header")
        version, width, height, count = struct.unpack("<IHHI", raw)
        if version != IRFR_VERSION:
            raise FormatError(f"{path}: unsupported IRFR version {version}")
        if (width, height) != (FRAME_WIDTH, FRAME_HEIGHT):
            raise FormatError(f"{path}: unexpected resolution {width}x{height}")
        payload = fh.read(4 * count * width * height)
        if len(payload) != 4 * count * width * height:
            raise FormatError(f"{path}: truncated frame payload")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after frames")
    return np.frombuffer(payload, dtype="<f4").reshape(count, height, width).copy()


def save_annotations_jsonl(path, per_frame_boxes):
    with open(path, "w", encoding="utf-8") as fh:
        for i, boxes in enumerate(per_frame_boxes):
            record = {"frame": i,
                      "boxes": [[b.cx, b.cy, b.w, b.h] for b in boxes]}
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_annotations_jsonl(path, frame_count: int) -> dict[int, list[BoundingBox]]:
    out: dict[int, list[BoundingBox]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
                index = record["frame"]
                boxes = [BoundingBox(*map(float, b)) for b in record["boxes"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: malformed annotation "
                                  f"({exc})") from exc
            if not isinstance(index, int) or not 0 <= index < frame_count:
                raise FormatError(f"{path}:{lineno}: frame index {index!r} out "
                                  f"of range [0, {frame_count})")
            if index in out:
                raise FormatError(f"{path}:{lineno}: duplicate frame index {index}")
            out[index] = boxes
    return out


def save_bundle(root, bundle: DatasetBundle, fps: float = 8.0):
    """Write one directory per room; requires the full view."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for room in bundle.room_ids():
        frames = [f for f in bundle.frames if f.source_id == room]
        room_dir = root / room
        room_dir.mkdir(parents=True, exist_ok=True)
        save_frames_irfr(room_dir / "frames.irfr",
                         np.stack([f.temperatures for f in frames]))
        save_annotations_jsonl(room_dir / "annotations.jsonl",
                               [f.boxes or () for f in frames])
        meta = {"room_id": room, "fps": fps, "modality": "ir",
                "frames": len(frames)}
        (room_dir / "meta.json").write_text(json.dumps(meta, sort_keys=True),
                                            encoding="utf-8")


def load_bundle(root, view: str = "full") -> DatasetBundle:
    """Load every room directory beneath root (sorted by room id)."""
    root = Path(root)
    room_dirs = sorted(p for p in root.iterdir() if p.is_dir()
                       and (p / "frames.irfr").exists())
    if not room_dirs:
        raise FormatError(f"{root}: no room directories with frames.irfr")
    frames = []
    for room_dir in room_dirs:
        stack = load_frames_irfr(room_dir / "frames.irfr")
        ann_path = room_dir / "annotations.jsonl"
        annotations = load_annotations_jsonl(ann_path, len(stack)) \
            if ann_path.exists() else {}
        for i, temps in enumerate(stack):
            if i in annotations:
                boxes = tuple(annotations[i])
                frames.append(IRFrame(temps, weak_label=int(len(boxes) > 0),
                                      boxes=boxes, source_id=room_dir.name,
                                      frame_index=i))
            else:
                frames.append(IRFrame(temps, source_id=room_dir.name,
                                      frame_index=i))
    return DatasetBundle(frames, view="full").as_view(view)


def load_meta(root, room_id: str) -> dict:
    path = Path(root) / room_id / "meta.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable metadata ({exc})") from exc
