"""Weakly-supervised localization from image-level labels.

A presence classifier (six full-resolution convs, global average pooling,
one linear unit, sigmoid) is trained on person/no-person labels. Activation
maps over the final feature stack localize the evidence; thresholding them
yields boxes. Maps are only produced on positive classifications (p >= 0.5).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import Detection
from .engine.layers import Conv3x3, Linear, ReLU
from .engine.losses import bce_grad, bce_loss
from .engine.training import TrainConfig, TrainResult, train_loop
from .engine.weights import ModelWeights
from .errors import EmptyDatasetError, SupervisionError
from .imaging import IRFrame, detect_on_field, normalize

MAP_VARIANTS = ("cam", "gradcam", "layercam")
POSITIVE_GATE = 0.5


@dataclass(frozen=True)
class ClassifierArchitecture:
    """Six 3x3 convs without pooling, then GAP -> linear -> sigmoid."""

    channels: tuple[int, int, int, int, int, int] = (16, 16, 32, 32, 64, 64)

    def __post_init__(self):
        if len(self.channels) != 6 or any(c < 1 for c in self.channels):
            raise ValueError("channels must be six positive integers")


class PresenceClassifier:
    """Binary person-presence classifier keeping full spatial resolution."""

    def __init__(self, arch: ClassifierArchitecture = ClassifierArchitecture(),
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.arch = arch
        widths = [1, *arch.channels]
        self._chain = []
        convs = []
        for i in range(6):
            conv = Conv3x3(widths[i], widths[i + 1], rng, dtype)
            convs.append(conv)
            self._chain += [conv, ReLU()]
        self.head = Linear(arch.channels[5], 1, rng, dtype)
        self._named = [(f"conv{i}", c) for i, c in enumerate(convs)]
        self._named.append(("head", self.head))

    # -- training protocol ------------------------------------------------
    def parameters(self):
        return {f"{ln}.{pn}": p for ln, layer in self._named
                for pn, p in layer.params.items()}

    def gradients(self):
        return {f"{ln}.{pn}": g for ln, layer in self._named
                for pn, g in layer.grads.items()}

    def zero_grads(self):
        for _, layer in self._named:
            layer.zero_grads()

    def all_layers(self):
        return [*self._chain, self.head]

    def state_dict(self):
        return [(name, p.copy()) for name, p in self.parameters().items()]

    def load_state_dict(self, state):
        params = self.parameters()
        for name, value in state:
            np.copyto(params[name], value)

    def features(self, x: np.ndarray) -> np.ndarray:
        """Final post-ReLU feature stack, [N, C, 24, 32]."""
        h = x
        for layer in self._chain:
            h = layer.forward(h)
        return h

    def logits(self, x: np.ndarray) -> np.ndarray:
        feats = self.features(x)
        self._feat_shape = feats.shape
        pooled = feats.mean(axis=(2, 3))
        return self.head.forward(pooled)[:, 0]

    def head_backward(self, d_logits: np.ndarray) -> np.ndarray:
        """Gradient of the logits with respect to the feature stack."""
        d_pooled = self.head.backward(d_logits[:, None])
        n, c, h, w = self._feat_shape
        return np.broadcast_to(d_pooled[:, :, None, None] / (h * w),
                               (n, c, h, w)).astype(d_pooled.dtype)

    def logit_feature_grad(self, feats: np.ndarray) -> np.ndarray:
        """d(logit)/d(features), computed by the head's actual backward pass."""
        n, c, h, w = feats.shape
        self.head.zero_grads()
        self.head.forward(feats.mean(axis=(2, 3)))
        d_pooled = self.head.backward(np.ones((n, 1), dtype=feats.dtype))
        return np.broadcast_to(d_pooled[:, :, None, None] / (h * w),
                               feats.shape).astype(feats.dtype)

    def backward_from_logits(self, d_logits: np.ndarray) -> np.ndarray:
        g = self.head_backward(d_logits)
        for layer in reversed(self._chain):
            g = layer.backward(g)
        return g

    def probabilities(self, x: np.ndarray) -> np.ndarray:
        z = self.logits(x)
        with np.errstate(over="ignore"):
            return (1.0 / (1.0 + np.exp(-z))).astype(z.dtype, copy=False)

    def loss_value(self, batch) -> float:
        x, y = _stack_batch(batch)
        return bce_loss(self.probabilities(x), y)

    def train_step(self, batch) -> float:
        x, y = _stack_batch(batch)
        z = self.logits(x)
        with np.errstate(over="ignore"):
            p = (1.0 / (1.0 + np.exp(-z))).astype(z.dtype, copy=False)
        loss = bce_loss(p, y)
        d_p = bce_grad(p, y)
        self.backward_from_logits(d_p * p * (1.0 - p))
        return float(loss)

    def val_loss(self, data) -> float:
        total = 0.0
        count = 0
        for start in range(0, len(data), 256):
            x, y = _stack_batch(data[start:start + 256])
            total += bce_loss(self.probabilities(x), y) * len(y)
            count += len(y)
        return total / count

    def to_weights(self) -> ModelWeights:
        return ModelWeights("cam", self.state_dict())

    @classmethod
    def from_weights(cls, weights: ModelWeights):
        if weights.model_tag != "cam":
            raise ValueError(f"expected cam weights, got {weights.model_tag!r}")
        tensors = weights.as_dict()
        channels = tuple(tensors[f"conv{i}.weight"].shape[0] for i in range(6))
        model = cls(ClassifierArchitecture(channels), np.random.default_rng(0))
        model.load_state_dict(weights.tensors)
        return model


def _stack_batch(batch):
    xs = np.stack([item[0] for item in batch])
    ys = np.asarray([item[1] for item in batch], dtype=xs.dtype)
    return xs, ys


def _weak_dataset(frames):
    data = []
    for f in frames:
        if f.boxes is not None:
            raise SupervisionError(
                f"frame {f.source_id}/{f.frame_index} exposes box annotations; "
                "weak supervision only sees image-level labels")
        if f.weak_label not in (0, 1):
            raise SupervisionError(
                f"frame {f.source_id}/{f.frame_index} lacks a weak label")
        data.append((normalize(f), float(f.weak_label)))
    if not data:
        raise EmptyDatasetError("no weakly labeled frames")
    labels = {y for _, y in data}
    if len(labels) < 2:
        raise EmptyDatasetError("weak training needs both classes present")
    return data


def train_classifier(train_frames, val_frames, config: TrainConfig, seed: int,
                     arch: ClassifierArchitecture = ClassifierArchitecture()
                     ) -> tuple[ModelWeights, TrainResult]:
    """Fit the presence classifier on weakly labeled frames (both classes)."""
    train_data = _weak_dataset(train_frames)
    val_data = _weak_dataset(val_frames)
    model = PresenceClassifier(arch, np.random.default_rng(seed))
    result = train_loop(model, train_data, val_data, config, seed)
    return model.to_weights(), result


def _normalize_map(raw: np.ndarray) -> np.ndarray:
    peak = raw.max()
    if peak > 0:
        return raw / peak
    return np.zeros_like(raw)


class CamLocalizer:
    """Activation-map localization around trained classifier weights."""

    def __init__(self, weights: ModelWeights, tau_map: float = 0.5,
                 min_blob_area: int = 2):
        self.model = PresenceClassifier.from_weights(weights)
        self.tau_map = float(tau_map)
        self.min_blob_area = int(min_blob_area)

    def probability(self, frame: IRFrame) -> float:
        return float(self.model.probabilities(normalize(frame)[None, ...])[0])

    def activation_map(self, frame: IRFrame, variant: str = "cam") -> np.ndarray:
        """Max-normalized non-negative 24x32 map in [0, 1]."""
        if variant not in MAP_VARIANTS:
            raise ValueError(f"unknown map variant {variant!r}")
        x = normalize(frame)[None, ...]
        feats = self.model.features(x)
        if variant == "cam":
            w = self.model.head.params["weight"][0]
            raw = np.maximum(np.tensordot(w, feats[0], axes=([0], [0])), 0.0)
        else:
            grad = self.model.logit_feature_grad(feats)[0]
            if variant == "gradcam":
                alpha = grad.mean(axis=(1, 2))
                raw = np.maximum(np.tensordot(alpha, feats[0], axes=([0], [0])), 0.0)
            else:  # layercam
                raw = np.maximum((np.maximum(grad, 0.0) * feats[0]).sum(axis=0), 0.0)
        return _normalize_map(raw)

    def detect(self, frame: IRFrame, variant: str = "cam") -> list[Detection]:
        """Empty on negative classification; else threshold the map."""
        p = self.probability(frame)
        if p < POSITIVE_GATE:
            return []
        amap = self.activation_map(frame, variant)
        dets = detect_on_field(amap, self.tau_map, self.min_blob_area)
        return [Detection(d.box, p) for d in dets]


def cam_map(weights: ModelWeights, frame: IRFrame) -> np.ndarray:
    return CamLocalizer(weights).activation_map(frame, "cam")


def gradcam_map(weights: ModelWeights, frame: IRFrame) -> np.ndarray:
    return CamLocalizer(weights).activation_map(frame, "gradcam")


def layercam_map(weights: ModelWeights, frame: IRFrame) -> np.ndarray:
    return CamLocalizer(weights).activation_map(frame, "layercam")


def detect_cam(weights: ModelWeights, frame: IRFrame, variant: str = "cam",
               tau_map: float = 0.5, min_blob_area: int = 2) -> list[Detection]:
    return CamLocalizer(weights, tau_map, min_blob_area).detect(frame, variant)


def calibrate_map_tau(weights: ModelWeights, variant: str, validation_frames,
                      grid, min_blob_area: int = 2) -> float:
    """Map threshold minimizing oLRP on labeled validation frames."""
    from .evalkit import olrp

    frames = list(validation_frames)
    if not frames:
        raise EmptyDatasetError("validation set is empty")
    if all(f.boxes is None for f in frames):
        raise EmptyDatasetError("validation frames carry no box annotations")
    localizer = CamLocalizer(weights, min_blob_area=min_blob_area)
    cached = []
    for f in frames:
        p = localizer.probability(f)
        amap = localizer.activation_map(f, variant) if p >= POSITIVE_GATE else None
        cached.append((p, amap, list(f.boxes or ())))
    best_tau = None
    best = None
    for tau in sorted(grid):
        pairs = []
        for p, amap, gts in cached:
            if amap is None:
                pairs.append(([], gts))
            else:
                dets = detect_on_field(amap, float(tau), min_blob_area)
                pairs.append(([Detection(d.box, p) for d in dets], gts))
        score = olrp(pairs).olrp
        if best is None or score < best:
            best = score
            best_tau = float(tau)
    return best_tau
