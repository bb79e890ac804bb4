"""IRDW weight files: named float32 tensors plus a model tag.

Layout (all little-endian):
  magic "IRDW" | u32 version=1 | u8 model tag | u32 tensor count
  per tensor: u16 name length | UTF-8 name | u8 rank | u32 x rank dims
              | float32 payload (row-major)
Round trips are bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ..errors import FormatError

MAGIC = b"IRDW"
VERSION = 1
MODEL_TAGS = {"dae": 1, "dvae": 2, "cam": 3, "ssd": 4}
_TAG_NAMES = {v: k for k, v in MODEL_TAGS.items()}


@dataclass
class ModelWeights:
    """Ordered named parameter collection for one trained model."""

    model_tag: str
    tensors: list[tuple[str, np.ndarray]]

    def __post_init__(self):
        if self.model_tag not in MODEL_TAGS:
            raise ValueError(f"unknown model tag {self.model_tag!r}")
        names = [n for n, _ in self.tensors]
        if len(names) != len(set(names)):
            raise ValueError("tensor names must be unique")
        self.tensors = [(n, np.asarray(t, dtype=np.float32)) for n, t in self.tensors]

    def as_dict(self) -> dict[str, np.ndarray]:
        return dict(self.tensors)


def save_weights(path, weights: ModelWeights):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBI", VERSION, MODEL_TAGS[weights.model_tag],
                             len(weights.tensors)))
        for name, tensor in weights.tensors:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", tensor.ndim))
            fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _read(fh, size: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError(f"truncated weights file while reading {what}")
    return data


def load_weights(path) -> ModelWeights:
    with open(path, "rb") as fh:
        if _read(fh, 4, "magic") != MAGIC:
            raise FormatError("not an IRDW file (bad magic)")
        version, tag_code, count = struct.unpack("<IBI", _read(fh, 9, "header"))
        if version != VERSION:
            raise FormatError(f"unsupported IRDW version {version}")
        if tag_code not in _TAG_NAMES:
            raise FormatError(f"unknown model tag code {tag_code}")
        tensors = []
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read(fh, 2, "name length"))
            name = _read(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<B", _read(fh, 1, "rank"))
            dims = struct.unpack(f"<{rank}I", _read(fh, 4 * rank, "dims"))
            n_items = int(np.prod(dims)) if rank else 1
            payload = _read(fh, 4 * n_items, f"payload of {name!r}")
            arr = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
            tensors.append((name, arr))
        if fh.read(1):
            raise FormatError("trailing bytes after last tensor")
    return ModelWeights(_TAG_NAMES[tag_code], tensors)
